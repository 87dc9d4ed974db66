//! Bayesian optimization of the distance surface with a GP surrogate, then
//! posterior sampling from the surrogate likelihood.

use super::{
    check_inferable, InferenceError, InferenceResult, ParameterLayout, PriorModel, Progress, ProgressFn,
    SurrogateSummary,
};
use crate::executor::Executor;
use crate::gp::{gp_fit_jittered, optimize_hyper_from, GpHyper, GpModel, HyperBounds};
use crate::rng::RngStream;
use statrs::function::erf::erfc;
use std::f64::consts::{PI, SQRT_2};
use std::time::Instant;

/// Batch-index offset for acquisition simulations, above any init index.
pub const ACQUISITION_INDEX_BASE: u64 = 1 << 32;
pub const WARMUP_STEPS: usize = 1000;
pub const THIN: usize = 5;
pub const TARGET_ACCEPTANCE: f64 = 0.234;

#[derive(Debug, Clone, PartialEq)]
pub struct BolfiConfig {
    pub bounds: Vec<(f64, f64)>,
    pub n_init: usize,
    pub n_total: usize,
    pub log_transform: bool,
    pub refit_every: usize,
    pub delta: f64,
    pub acquisition_restarts: usize,
    pub hyper_restarts: usize,
    pub parameters: Vec<String>,
}

impl BolfiConfig {
    pub fn new(bounds: Vec<(f64, f64)>, n_init: usize, n_total: usize) -> Self {
        Self {
            bounds,
            n_init,
            n_total,
            log_transform: true,
            refit_every: 5,
            delta: 0.1,
            acquisition_restarts: 10,
            hyper_restarts: 5,
            parameters: Vec::new(),
        }
    }
}

/// Acquisition bookkeeping: round counter, dimension, confidence, box.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionState {
    pub t: usize,
    pub d: usize,
    pub delta: f64,
    pub bounds: Vec<(f64, f64)>,
}

impl AcquisitionState {
    /// `β_t = 2 log(t^{d/2+2} π² / (3δ))`.
    pub fn beta(&self) -> f64 {
        let t = self.t.max(1) as f64;
        2.0 * ((self.d as f64 / 2.0 + 2.0) * t.ln() + (PI * PI / (3.0 * self.delta)).ln())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.bounds.len() && x.iter().zip(&self.bounds).all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    fn clip(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(&self.bounds) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

/// Lower confidence bound `μ(x) − √β_t · √ν(x)`.
pub fn lcb_acquisition(model: &GpModel, x: &[f64], state: &AcquisitionState) -> Result<f64, InferenceError> {
    if !state.contains(x) {
        return Err(InferenceError::OutOfBounds(x.to_vec()));
    }
    let (mu, nu) = model.predict(x)?;
    Ok(mu - state.beta().sqrt() * nu.sqrt())
}

fn lcb_with_grad(model: &GpModel, x: &[f64], sqrt_beta: f64) -> (f64, Vec<f64>) {
    let p = model.predict_with_grad(x).expect("dimension checked");
    let sd = p.var.sqrt();
    let grad = p
        .d_mean
        .iter()
        .zip(&p.d_var)
        .map(|(dm, dv)| {
            if sd > 1e-12 {
                dm - sqrt_beta * dv / (2.0 * sd)
            } else {
                *dm
            }
        })
        .collect();
    (p.mean - sqrt_beta * sd, grad)
}

/// Projected gradient descent with backtracking inside `state.bounds`.
/// Value and gradient of a function to minimize.
type Objective<'a> = dyn Fn(&[f64]) -> (f64, Vec<f64>) + 'a;

fn descend(f: &Objective<'_>, start: Vec<f64>, state: &AcquisitionState) -> (f64, Vec<f64>) {
    let scale: f64 = state.bounds.iter().map(|(lo, hi)| hi - lo).fold(0.0, f64::max);
    let mut x = start;
    let (mut fx, mut g) = f(&x);
    let mut step = 0.1 * scale;
    for _ in 0..200 {
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn < 1e-12 || step < 1e-10 * scale {
            break;
        }
        let mut cand: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b / gn).collect();
        state.clip(&mut cand);
        let (fc, gc) = f(&cand);
        if fc < fx {
            x = cand;
            fx = fc;
            g = gc;
            step *= 1.5;
        } else {
            step *= 0.5;
        }
    }
    (fx, x)
}

fn lexicographic_less(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).find(|(x, y)| x != y).is_some_and(|(x, y)| x < y)
}

fn uniform_in(bounds: &[(f64, f64)], stream: &mut RngStream) -> Vec<f64> {
    bounds
        .iter()
        .map(|(lo, hi)| lo + (hi - lo) * stream.uniform())
        .collect()
}

/// Minimizes a smooth function over the box from several starts; ties go
/// to the lexicographically smallest point.
fn minimize(f: &Objective<'_>, starts: Vec<Vec<f64>>, state: &AcquisitionState) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for s in starts {
        let (v, x) = descend(f, s, state);
        let better = match &best {
            None => true,
            Some((bv, bx)) => v < *bv || (v == *bv && lexicographic_less(&x, bx)),
        };
        if better {
            best = Some((v, x));
        }
    }
    best.expect("at least one start").1
}

/// Next point to simulate: the LCB minimizer from `restarts` random starts
/// plus the best training input. An empty model yields a uniform draw.
pub fn acquire_next(model: &GpModel, state: &AcquisitionState, restarts: usize, stream: &mut RngStream) -> Vec<f64> {
    if model.is_empty() {
        return uniform_in(&state.bounds, stream);
    }
    let mut starts: Vec<Vec<f64>> = (0..restarts).map(|_| uniform_in(&state.bounds, stream)).collect();
    let best = model
        .targets()
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| model.inputs()[i].clone())
        .expect("nonempty model");
    starts.push(best);
    let sqrt_beta = state.beta().sqrt();
    let mut x = minimize(&|p: &[f64]| lcb_with_grad(model, p, sqrt_beta), starts, state);
    state.clip(&mut x);
    x
}

/// Stratified uniform points: each dimension gets one draw per stratum, in
/// an independently shuffled order.
pub fn latin_hypercube(bounds: &[(f64, f64)], n: usize, stream: &mut RngStream) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; bounds.len()]; n];
    for (c, (lo, hi)) in bounds.iter().enumerate() {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, stream.below(i + 1));
        }
        for (i, p) in pts.iter_mut().enumerate() {
            let u = (perm[i] as f64 + stream.uniform()) / n as f64;
            p[c] = lo + (hi - lo) * u;
        }
    }
    pts
}

/// Fitted surrogate plus what is needed to evaluate the approximate
/// posterior.
#[derive(Debug)]
pub struct BolfiPosterior<'g> {
    pub model: GpModel,
    /// Threshold on the surrogate mean, in target units.
    pub epsilon: f64,
    pub prior: PriorModel<'g>,
    pub log_transform: bool,
    pub bounds: Vec<(f64, f64)>,
    /// Raw simulated distances, aligned with `model.inputs()`.
    pub distances: Vec<f64>,
    pub n_sim: u64,
    pub root_seed: u64,
    /// Threshold recorded each time the hyperparameters were refit.
    pub epsilon_history: Vec<f64>,
}

impl BolfiPosterior<'_> {
    pub fn parameter_names(&self) -> &[String] {
        self.prior.layout().names()
    }

    fn to_distance(&self, target: f64) -> f64 {
        if self.log_transform {
            target.exp_m1()
        } else {
            target
        }
    }

    /// Minimizer of the surrogate mean over the bounds, started from every
    /// training input.
    pub fn surrogate_argmin(&self) -> Vec<f64> {
        let state = AcquisitionState {
            t: 1,
            d: self.bounds.len(),
            delta: 0.1,
            bounds: self.bounds.clone(),
        };
        let f = |p: &[f64]| {
            let g = self.model.predict_with_grad(p).expect("dimension checked");
            (g.mean, g.d_mean)
        };
        minimize(&f, self.model.inputs().to_vec(), &state)
    }

    fn training_argmin(&self) -> Vec<f64> {
        self.model
            .inputs()
            .iter()
            .map(|x| (self.model.predict(x).expect("dimension checked").0, x))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, x)| x.clone())
            .expect("trained on at least one point")
    }
}

pub(crate) fn min_mean_at_inputs(model: &GpModel) -> f64 {
    model
        .inputs()
        .iter()
        .map(|x| model.predict(x).expect("dimension checked").0)
        .fold(f64::INFINITY, f64::min)
}

/// `log Φ(z)`, accurate far into the lower tail.
pub fn log_normal_cdf(z: f64) -> f64 {
    if z < -30.0 {
        let z2 = z * z;
        -0.5 * z2 - (-z).ln() - 0.5 * (2.0 * PI).ln() + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    } else {
        (0.5 * erfc(-z / SQRT_2)).ln()
    }
}

/// `log p(θ) + log Φ((ε − μ(θ)) / √(ν(θ) + σ_n²))`; `-∞` outside the
/// prior support or the bounds.
pub fn posterior_logpdf(post: &BolfiPosterior<'_>, theta: &[f64]) -> f64 {
    let inside = theta.len() == post.bounds.len()
        && theta
            .iter()
            .zip(&post.bounds)
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi);
    if !inside {
        return f64::NEG_INFINITY;
    }
    let lp = post.prior.log_density(theta);
    if lp == f64::NEG_INFINITY {
        return lp;
    }
    let (mu, nu) = post.model.predict(theta).expect("dimension checked");
    let z = (post.epsilon - mu) / (nu + post.model.hyper().noise_var).sqrt();
    lp + log_normal_cdf(z)
}

fn fit_targets(distances: &[f64], log_transform: bool) -> Vec<f64> {
    if log_transform {
        distances.iter().map(|d| d.ln_1p()).collect()
    } else {
        distances.to_vec()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn refit_hyper(
    x: &[Vec<f64>],
    y: &[f64],
    previous: Option<&GpHyper>,
    restarts: usize,
    stream: &mut RngStream,
) -> Result<GpHyper, InferenceError> {
    let d = x[0].len();
    let bounds = HyperBounds::default_for(x, y, d);
    let mut starts: Vec<Vec<f64>> = (0..restarts)
        .map(|_| {
            bounds
                .lower
                .iter()
                .zip(&bounds.upper)
                .map(|(lo, hi)| lo + (hi - lo) * stream.uniform())
                .collect()
        })
        .collect();
    if let Some(h) = previous {
        starts.push(h.to_log());
    }
    Ok(optimize_hyper_from(x, y, &bounds, &starts)?)
}

pub fn fit_bolfi<'g>(exec: &Executor<'g>, cfg: &BolfiConfig) -> Result<BolfiPosterior<'g>, InferenceError> {
    fit_bolfi_with_progress(exec, cfg, &mut |_| {})
}

/// Runs `n_init` stratified simulations, then `n_total − n_init`
/// acquisitions, one simulation each.
pub fn fit_bolfi_with_progress<'g>(
    exec: &Executor<'g>,
    cfg: &BolfiConfig,
    progress: ProgressFn<'_>,
) -> Result<BolfiPosterior<'g>, InferenceError> {
    let cg = exec.graph();
    let distance = check_inferable(cg)?;
    let layout = ParameterLayout::new(cg, &cfg.parameters)?;
    let prior = PriorModel::new(cg, &layout)?;
    let d = layout.dim();
    if cfg.bounds.len() != d {
        return Err(InferenceError::InvalidConfig(format!(
            "{} bounds for {d} parameters",
            cfg.bounds.len()
        )));
    }
    if let Some((lo, hi)) = cfg
        .bounds
        .iter()
        .find(|(lo, hi)| !lo.is_finite() || !hi.is_finite() || lo >= hi)
    {
        return Err(InferenceError::InvalidConfig(format!("invalid bound {lo}:{hi}")));
    }
    if cfg.n_init < d + 2 {
        return Err(InferenceError::InsufficientInit {
            n_init: cfg.n_init,
            required: d + 2,
        });
    }
    if cfg.n_total < cfg.n_init {
        return Err(InferenceError::InvalidConfig("n_total must be at least n_init".into()));
    }
    if cfg.refit_every == 0 || !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(InferenceError::InvalidConfig(
            "refit_every must be positive and delta in (0, 1)".into(),
        ));
    }
    let seed = exec.root_seed();
    // Acquired points are simulated one at a time, so every simulation here
    // is a batch of one.
    let single = Executor::new(cg, seed, 1).workers(exec.worker_count());
    let simulate = |points: &[Vec<f64>], first_index: u64| -> Result<Vec<f64>, InferenceError> {
        let indices: Vec<u64> = (0..points.len() as u64).map(|i| first_index + i).collect();
        let batches = single.run_indices_with(&indices, |idx| {
            Ok(layout.to_batch(&[points[(idx - first_index) as usize].clone()], idx))
        })?;
        Ok(batches
            .iter()
            .map(|b| b.get(distance).expect("distance computed").element(0)[0])
            .collect())
    };

    let mut init_stream = RngStream::new(seed, 0, "__bolfi_init");
    let mut x = latin_hypercube(&cfg.bounds, cfg.n_init, &mut init_stream);
    let mut distances = simulate(&x, 0)?;
    progress(&Progress {
        method: "bolfi",
        stage: "initial design".into(),
        n_sim: distances.len() as u64,
        accepted: 0,
        threshold: None,
    });

    let mut y = fit_targets(&distances, cfg.log_transform);
    let mut hyper_stream = RngStream::new(seed, 0, "__bolfi_hyper");
    let mut hyper = refit_hyper(&x, &y, None, cfg.hyper_restarts, &mut hyper_stream)?;
    let mut model = gp_fit_jittered(&x, &y, &hyper)?;
    let mut epsilon_history = vec![min_mean_at_inputs(&model)];
    let mut acq_stream = RngStream::new(seed, 0, "__bolfi_acquire");

    for t in 1..=(cfg.n_total - cfg.n_init) {
        let state = AcquisitionState {
            t,
            d,
            delta: cfg.delta,
            bounds: cfg.bounds.clone(),
        };
        let next = acquire_next(&model, &state, cfg.acquisition_restarts, &mut acq_stream);
        debug_assert!(state.contains(&next));
        let dist = simulate(std::slice::from_ref(&next), ACQUISITION_INDEX_BASE + t as u64)?[0];
        x.push(next);
        distances.push(dist);
        y = fit_targets(&distances, cfg.log_transform);
        if t % cfg.refit_every == 0 {
            hyper = refit_hyper(&x, &y, Some(&hyper), cfg.hyper_restarts, &mut hyper_stream)?;
            model = gp_fit_jittered(&x, &y, &hyper)?;
            epsilon_history.push(min_mean_at_inputs(&model));
        } else {
            hyper.mean = mean(&y);
            model = gp_fit_jittered(&x, &y, &hyper)?;
        }
        progress(&Progress {
            method: "bolfi",
            stage: format!("acquisition {t}"),
            n_sim: distances.len() as u64,
            accepted: 0,
            threshold: None,
        });
    }
    let epsilon = min_mean_at_inputs(&model);
    Ok(BolfiPosterior {
        model,
        epsilon,
        prior,
        log_transform: cfg.log_transform,
        bounds: cfg.bounds.clone(),
        n_sim: distances.len() as u64,
        distances,
        root_seed: seed,
        epsilon_history,
    })
}

/// Metropolis rule: accept when `u < exp(log_ratio)`.
pub fn metropolis_accept(log_ratio: f64, u: f64) -> bool {
    log_ratio >= 0.0 || u < log_ratio.exp()
}

/// Adaptive random-walk Metropolis over the approximate posterior.
pub fn sample_posterior(
    post: &BolfiPosterior<'_>,
    n_samples: usize,
    seed: u64,
) -> Result<InferenceResult, InferenceError> {
    let started = Instant::now();
    if n_samples == 0 {
        return Err(InferenceError::InvalidConfig("n_samples must be positive".into()));
    }
    let mut stream = RngStream::new(seed, 0, "__bolfi_mcmc");
    let widths: Vec<f64> = post.bounds.iter().map(|(lo, hi)| hi - lo).collect();
    let mut log_scale = (0.1f64).ln();
    let mut theta = post.training_argmin();
    let mut lp = posterior_logpdf(post, &theta);
    if lp == f64::NEG_INFINITY {
        return Err(InferenceError::InvalidConfig(
            "chain start has zero posterior density".into(),
        ));
    }
    let step = |theta: &mut Vec<f64>, lp: &mut f64, scale: f64, stream: &mut RngStream| -> bool {
        let prop: Vec<f64> = theta
            .iter()
            .zip(&widths)
            .map(|(t, w)| t + scale * w * stream.standard_normal())
            .collect();
        let lp_prop = posterior_logpdf(post, &prop);
        let u = stream.uniform();
        if metropolis_accept(lp_prop - *lp, u) {
            *theta = prop;
            *lp = lp_prop;
            true
        } else {
            false
        }
    };
    for k in 0..WARMUP_STEPS {
        let accepted = step(&mut theta, &mut lp, log_scale.exp(), &mut stream);
        let gain = 1.0 / ((k + 1) as f64).powf(0.6);
        log_scale += gain * (if accepted { 1.0 } else { 0.0 } - TARGET_ACCEPTANCE);
    }
    let scale = log_scale.exp();
    let total = n_samples * THIN;
    let mut samples = Vec::with_capacity(n_samples);
    let mut n_acc = 0usize;
    for k in 0..total {
        if step(&mut theta, &mut lp, scale, &mut stream) {
            n_acc += 1;
        }
        if (k + 1) % THIN == 0 {
            samples.push(theta.clone());
        }
    }
    let rate = n_acc as f64 / total as f64;
    if rate < 0.01 {
        return Err(InferenceError::ChainStuck(rate));
    }
    let distances: Vec<f64> = samples
        .iter()
        .map(|s| post.to_distance(post.model.predict(s).expect("dimension checked").0))
        .collect();
    let h = post.model.hyper();
    Ok(InferenceResult {
        method: "bolfi".into(),
        parameter_names: post.parameter_names().to_vec(),
        weights: vec![1.0 / n_samples as f64; n_samples],
        samples,
        distances,
        threshold: post.to_distance(post.epsilon),
        n_sim: post.n_sim,
        root_seed: post.root_seed,
        batch_size: 1,
        partial: false,
        rounds: Vec::new(),
        surrogate: Some(SurrogateSummary {
            epsilon: post.epsilon,
            log_transform: post.log_transform,
            n_train: post.model.len(),
            argmin: post.surrogate_argmin(),
            signal_var: h.signal_var,
            lengthscales: h.lengthscales.clone(),
            noise_var: h.noise_var,
            acceptance_rate: rate,
        }),
        elapsed_seconds: started.elapsed().as_secs_f64(),
    })
}
