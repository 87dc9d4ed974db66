//! Population Monte Carlo ABC with a shrinking threshold schedule.

use super::rejection::{quantile_draws, threshold_from_quantile, Draws};
use super::{
    check_inferable, ess, sort_by_distance, InferenceError, InferenceResult, ParameterLayout, PriorModel, Progress,
    ProgressFn, RoundSummary,
};
use crate::executor::{Batch, ExecError, Executor};
use crate::linalg::{cholesky, solve_lower, Matrix};
use crate::rng::RngStream;
use std::f64::consts::PI;
use std::time::Instant;

/// Cap on consecutive proposals with zero prior density for one element.
pub const MAX_PROPOSAL_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub round: usize,
    pub particles: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub distances: Vec<f64>,
    pub threshold: f64,
    /// Covariance of the kernel that generated this round (zero for round 1).
    pub kernel_cov: Matrix,
    pub n_sim: u64,
}

impl Population {
    pub fn ess(&self) -> f64 {
        ess(&self.weights)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmcConfig {
    pub n_samples: usize,
    pub schedule: Vec<f64>,
    /// Total simulation cap across rounds.
    pub budget: Option<u64>,
    pub parameters: Vec<String>,
}

impl SmcConfig {
    pub fn new(n_samples: usize, schedule: Vec<f64>) -> Self {
        Self {
            n_samples,
            schedule,
            budget: None,
            parameters: Vec::new(),
        }
    }
}

/// Twice the weighted covariance `Σ wᵢ (xᵢ − x̄)(xᵢ − x̄)ᵀ`.
pub fn weighted_cov(particles: &[Vec<f64>], weights: &[f64]) -> Result<Matrix, InferenceError> {
    if particles.len() < 2 || particles.len() != weights.len() {
        return Err(InferenceError::InvalidConfig(format!(
            "need at least two particles with one weight each, got {} and {}",
            particles.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| *w >= 1.0 - 1e-12) {
        return Err(InferenceError::DegenerateWeights { round: 0 });
    }
    let d = particles[0].len();
    let mut mean = vec![0.0; d];
    for (x, w) in particles.iter().zip(weights) {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += w * v;
        }
    }
    let mut cov = Matrix::zeros(d, d);
    for (x, w) in particles.iter().zip(weights) {
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += w * (x[a] - mean[a]) * (x[b] - mean[b]);
            }
        }
    }
    Ok(cov.scale(2.0))
}

/// Gaussian perturbation kernel with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct Kernel {
    chol: Matrix,
    log_norm: f64,
}

impl Kernel {
    pub fn new(cov: &Matrix) -> Option<Self> {
        let chol = cholesky(cov, 1e-12).ok()?;
        let d = cov.rows() as f64;
        let log_norm = -chol.diag().iter().map(|v| v.ln()).sum::<f64>() - 0.5 * d * (2.0 * PI).ln();
        Some(Self { chol, log_norm })
    }

    pub fn log_density(&self, x: &[f64], center: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(center).map(|(a, b)| a - b).collect();
        let z = solve_lower(&self.chol, &diff);
        self.log_norm - 0.5 * z.iter().map(|v| v * v).sum::<f64>()
    }

    fn perturb(&self, center: &[f64], stream: &mut RngStream) -> Vec<f64> {
        let z: Vec<f64> = (0..center.len()).map(|_| stream.standard_normal()).collect();
        center.iter().zip(self.chol.matvec(&z)).map(|(c, v)| c + v).collect()
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log p(θ) − log Σⱼ wⱼ N(θ; θⱼ, Σ)`; `-∞` where the prior is zero.
pub fn smc_log_weight(theta: &[f64], prev: &Population, prior_logpdf: f64, kernel: &Kernel) -> f64 {
    if prior_logpdf == f64::NEG_INFINITY {
        return prior_logpdf;
    }
    let mix = log_sum_exp(
        prev.particles
            .iter()
            .zip(&prev.weights)
            .map(|(p, w)| w.ln() + kernel.log_density(theta, p)),
    );
    prior_logpdf - mix
}

/// Unnormalized importance weight, `exp` of [`smc_log_weight`].
pub fn smc_weight(
    theta: &[f64],
    prev: &Population,
    prior_logpdf: f64,
    kernel_cov: &Matrix,
) -> Result<f64, InferenceError> {
    let kernel = Kernel::new(kernel_cov).ok_or(InferenceError::SingularKernel { round: prev.round + 1 })?;
    Ok(smc_log_weight(theta, prev, prior_logpdf, &kernel).exp())
}

/// Index offset separating the batch indices of different rounds.
pub fn round_index_base(round: usize) -> u64 {
    (round as u64) << 40
}

fn pick(cumulative: &[f64], u: f64) -> usize {
    let target = u * cumulative[cumulative.len() - 1];
    cumulative.partition_point(|c| *c <= target).min(cumulative.len() - 1)
}

struct Proposer<'a> {
    round: usize,
    prev: &'a Population,
    cumulative: Vec<f64>,
    kernel: &'a Kernel,
    prior: &'a PriorModel<'a>,
    root_seed: u64,
    batch_size: usize,
}

impl Proposer<'_> {
    fn propose(&self, batch_index: u64) -> Result<Vec<Vec<f64>>, InferenceError> {
        let mut resample = RngStream::new(self.root_seed, batch_index, &format!("__smc_resample_r{}", self.round));
        let mut perturb = RngStream::new(self.root_seed, batch_index, &format!("__smc_perturb_r{}", self.round));
        (0..self.batch_size)
            .map(|_| {
                for _ in 0..MAX_PROPOSAL_ATTEMPTS {
                    let ancestor = &self.prev.particles[pick(&self.cumulative, resample.uniform())];
                    let theta = self.kernel.perturb(ancestor, &mut perturb);
                    if self.prior.log_density(&theta) > f64::NEG_INFINITY {
                        return Ok(theta);
                    }
                }
                Err(InferenceError::ProposalsExhausted {
                    round: self.round,
                    attempts: MAX_PROPOSAL_ATTEMPTS,
                })
            })
            .collect()
    }
}

pub fn sample_smc(exec: &Executor<'_>, cfg: &SmcConfig) -> Result<(InferenceResult, Vec<Population>), InferenceError> {
    sample_smc_with_progress(exec, cfg, &mut |_| {})
}

pub fn sample_smc_with_progress(
    exec: &Executor<'_>,
    cfg: &SmcConfig,
    progress: ProgressFn<'_>,
) -> Result<(InferenceResult, Vec<Population>), InferenceError> {
    let started = Instant::now();
    let cg = exec.graph();
    let distance = check_inferable(cg)?;
    if cfg.schedule.is_empty() {
        return Err(InferenceError::InvalidConfig(
            "schedule needs at least one quantile".into(),
        ));
    }
    if let Some(q) = cfg.schedule.iter().find(|q| !(**q > 0.0 && **q <= 1.0)) {
        return Err(InferenceError::BadQuantile(*q));
    }
    let layout = ParameterLayout::new(cg, &cfg.parameters)?;
    let prior = if cfg.schedule.len() > 1 {
        Some(PriorModel::new(cg, &layout)?)
    } else {
        None
    };
    let budget = cfg.budget.unwrap_or(u64::MAX);
    let d = layout.dim();

    let (draws, threshold) = quantile_draws(exec, &layout, distance, cfg.n_samples, cfg.schedule[0], progress, "smc")?;
    let n1 = draws.distances.len();
    let mut pops = vec![Population {
        round: 1,
        particles: draws.samples,
        weights: vec![1.0 / n1 as f64; n1],
        distances: draws.distances,
        threshold,
        kernel_cov: Matrix::zeros(d, d),
        n_sim: draws.n_sim,
    }];
    let mut total_sim = draws.n_sim;
    if total_sim > budget {
        return Err(budget_error(&layout, &pops[0], exec, total_sim, &pops, started));
    }

    for (r0, &q) in cfg.schedule.iter().enumerate().skip(1) {
        let round = r0 + 1;
        let prev = pops.last().expect("round 1 exists");
        let eps = threshold_from_quantile(&prev.distances, q)?;
        if eps > prev.threshold {
            return Err(InferenceError::ScheduleNotShrinking {
                round,
                previous: prev.threshold,
                current: eps,
            });
        }
        let cov = weighted_cov(&prev.particles, &prev.weights).map_err(|e| match e {
            InferenceError::DegenerateWeights { .. } => InferenceError::DegenerateWeights { round },
            other => other,
        })?;
        if cov.diag().iter().all(|v| *v == 0.0) {
            return Err(InferenceError::DegenerateWeights { round });
        }
        let kernel = Kernel::new(&cov).ok_or(InferenceError::SingularKernel { round })?;
        let mut cumulative = Vec::with_capacity(prev.weights.len());
        let mut acc = 0.0;
        for w in &prev.weights {
            acc += w;
            cumulative.push(acc);
        }
        let proposer = Proposer {
            round,
            prev,
            cumulative,
            kernel: &kernel,
            prior: prior.as_ref().expect("multi-round schedules build a prior model"),
            root_seed: exec.root_seed(),
            batch_size: exec.batch_size(),
        };

        let base = round_index_base(round);
        let chunk = (exec.worker_count() as u64 * 8).max(1);
        let mut accepted = Draws {
            samples: Vec::new(),
            distances: Vec::new(),
            n_sim: 0,
        };
        let mut next = 0u64;
        // Proposal errors are not executor errors; stash the first one.
        let proposal_error = std::sync::Mutex::new(None::<(u64, InferenceError)>);
        while accepted.distances.len() < cfg.n_samples {
            if total_sim >= budget {
                let partial = Population {
                    round,
                    particles: accepted.samples.clone(),
                    weights: vec![],
                    distances: accepted.distances.clone(),
                    threshold: eps,
                    kernel_cov: cov.clone(),
                    n_sim: accepted.n_sim,
                };
                return Err(budget_error(&layout, &partial, exec, total_sim, &pops, started));
            }
            let indices: Vec<u64> = (next..next + chunk).map(|j| base + j).collect();
            next += chunk;
            let prepare = |idx: u64| -> Result<Batch, ExecError> {
                match proposer.propose(idx) {
                    Ok(thetas) => Ok(layout.to_batch(&thetas, idx)),
                    Err(e) => {
                        let mut slot = proposal_error.lock().expect("error slot");
                        if slot.as_ref().is_none_or(|(i, _)| idx < *i) {
                            *slot = Some((idx, e));
                        }
                        Err(ExecError::InvalidConfig("proposal failed".into()))
                    }
                }
            };
            let batches = match exec.run_indices_with(&indices, prepare) {
                Ok(b) => b,
                Err(e) => {
                    if let Some((_, pe)) = proposal_error.lock().expect("error slot").take() {
                        return Err(pe);
                    }
                    return Err(e.into());
                }
            };
            for b in &batches {
                if accepted.distances.len() >= cfg.n_samples || total_sim >= budget {
                    break;
                }
                let dist = b.get(distance).expect("distance computed");
                for e in 0..b.batch_size() {
                    let dv = dist.element(e)[0];
                    if dv <= eps && accepted.distances.len() < cfg.n_samples {
                        accepted.samples.push(layout.extract(b, e));
                        accepted.distances.push(dv);
                    }
                }
                accepted.n_sim += b.batch_size() as u64;
                total_sim += b.batch_size() as u64;
            }
            progress(&Progress {
                method: "smc",
                stage: format!("round {round}"),
                n_sim: total_sim,
                accepted: accepted.distances.len(),
                threshold: Some(eps),
            });
        }

        let log_w: Vec<f64> = accepted
            .samples
            .iter()
            .map(|t| smc_log_weight(t, prev, proposer.prior.log_density(t), &kernel))
            .collect();
        let norm = log_sum_exp(log_w.iter().copied());
        if !norm.is_finite() {
            return Err(InferenceError::DegenerateWeights { round });
        }
        let weights: Vec<f64> = log_w.iter().map(|lw| (lw - norm).exp()).collect();
        pops.push(Population {
            round,
            particles: accepted.samples,
            weights,
            distances: accepted.distances,
            threshold: eps,
            kernel_cov: cov,
            n_sim: accepted.n_sim,
        });
    }

    let last = pops.last().expect("at least one round");
    let result = population_result(&layout, last, exec, total_sim, &pops, started);
    Ok((result, pops))
}

fn summaries(pops: &[Population]) -> Vec<RoundSummary> {
    pops.iter()
        .map(|p| RoundSummary {
            round: p.round,
            threshold: p.threshold,
            n_sim: p.n_sim,
            n_accepted: p.particles.len(),
            ess: p.ess(),
        })
        .collect()
}

fn population_result(
    layout: &ParameterLayout,
    pop: &Population,
    exec: &Executor<'_>,
    n_sim: u64,
    pops: &[Population],
    started: Instant,
) -> InferenceResult {
    let (samples, distances, weights) =
        sort_by_distance(pop.particles.clone(), pop.distances.clone(), pop.weights.clone());
    InferenceResult {
        method: "smc".into(),
        parameter_names: layout.names().to_vec(),
        samples,
        weights,
        distances,
        threshold: pop.threshold,
        n_sim,
        root_seed: exec.root_seed(),
        batch_size: exec.batch_size(),
        partial: false,
        rounds: summaries(pops),
        surrogate: None,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    }
}

/// The partial result carries whatever the interrupted round accepted, with
/// uniform weights since importance weights were not computed.
fn budget_error(
    layout: &ParameterLayout,
    pop: &Population,
    exec: &Executor<'_>,
    n_sim: u64,
    pops: &[Population],
    started: Instant,
) -> InferenceError {
    let mut p = pop.clone();
    let n = p.particles.len();
    if p.weights.len() != n {
        p.weights = vec![1.0 / n as f64; n];
    }
    let mut result = population_result(layout, &p, exec, n_sim, pops, started);
    result.partial = true;
    InferenceError::BudgetExhausted {
        partial: Box::new(result),
    }
}
