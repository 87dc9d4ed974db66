//! Gaussian-process regression with an anisotropic squared-exponential
//! kernel and a constant mean.

use crate::linalg::{cho_inverse, cho_solve, cholesky, half_log_det, solve_lower, Matrix};
use crate::rng::RngStream;
use std::f64::consts::PI;
use thiserror::Error;

/// Relative pivot floor for the kernel-matrix Cholesky factorization.
pub const CHOLESKY_REL_TOL: f64 = 1e-12;
/// Relative jitter added on a failed factorization before giving up.
pub const JITTER_REL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("kernel matrix not positive definite at pivot {index} (value {pivot:e}); raise the noise variance")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("non-finite training data")]
    NonFinite,
    #[error("every optimizer restart failed")]
    AllRestartsFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpHyper {
    pub signal_var: f64,
    pub lengthscales: Vec<f64>,
    /// May be zero for exact interpolation.
    pub noise_var: f64,
    pub mean: f64,
}

impl GpHyper {
    pub fn new(signal_var: f64, lengthscales: Vec<f64>, noise_var: f64, mean: f64) -> Result<Self, GpError> {
        let h = Self {
            signal_var,
            lengthscales,
            noise_var,
            mean,
        };
        h.check()?;
        Ok(h)
    }

    fn check(&self) -> Result<(), GpError> {
        if !(self.signal_var > 0.0 && self.signal_var.is_finite()) {
            return Err(GpError::InvalidHyper(format!("signal variance {}", self.signal_var)));
        }
        if self.lengthscales.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(GpError::InvalidHyper(format!("lengthscales {:?}", self.lengthscales)));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(GpError::InvalidHyper(format!("noise variance {}", self.noise_var)));
        }
        if !self.mean.is_finite() {
            return Err(GpError::InvalidHyper("mean".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// `[log σ_f², log ℓ_1.., log σ_n²]`, the optimizer's coordinates.
    pub fn to_log(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim() + 2);
        v.push(self.signal_var.ln());
        v.extend(self.lengthscales.iter().map(|l| l.ln()));
        v.push(self.noise_var.ln());
        v
    }

    pub fn from_log(log: &[f64], mean: f64) -> Self {
        let d = log.len() - 2;
        Self {
            signal_var: log[0].exp(),
            lengthscales: log[1..=d].iter().map(|x| x.exp()).collect(),
            noise_var: log[d + 1].exp(),
            mean,
        }
    }
}

fn sq_dist_scaled(a: &[f64], b: &[f64], ls: &[f64]) -> f64 {
    a.iter().zip(b).zip(ls).map(|((x, y), l)| ((x - y) / l).powi(2)).sum()
}

pub fn kernel(a: &[f64], b: &[f64], hyper: &GpHyper) -> Result<f64, GpError> {
    for v in [a, b] {
        if v.len() != hyper.dim() {
            return Err(GpError::DimensionMismatch {
                expected: hyper.dim(),
                got: v.len(),
            });
        }
    }
    Ok(k_unchecked(a, b, hyper))
}

fn k_unchecked(a: &[f64], b: &[f64], h: &GpHyper) -> f64 {
    h.signal_var * (-0.5 * sq_dist_scaled(a, b, &h.lengthscales)).exp()
}

#[derive(Debug, Clone)]
pub struct GpModel {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    hyper: GpHyper,
    chol: Matrix,
    alpha: Vec<f64>,
}

pub fn gp_fit(x: &[Vec<f64>], y: &[f64], hyper: &GpHyper) -> Result<GpModel, GpError> {
    hyper.check()?;
    if x.len() != y.len() {
        return Err(GpError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let d = hyper.dim();
    if let Some(bad) = x.iter().find(|r| r.len() != d) {
        return Err(GpError::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(GpError::NonFinite);
    }
    let n = x.len();
    let k = Matrix::from_fn(n, n, |i, j| {
        k_unchecked(&x[i], &x[j], hyper) + if i == j { hyper.noise_var } else { 0.0 }
    });
    let chol = cholesky(&k, CHOLESKY_REL_TOL).map_err(|f| GpError::NotPositiveDefinite {
        index: f.index,
        pivot: f.pivot,
    })?;
    let centered: Vec<f64> = y.iter().map(|v| v - hyper.mean).collect();
    let alpha = cho_solve(&chol, &centered);
    Ok(GpModel {
        x: x.to_vec(),
        y: y.to_vec(),
        hyper: hyper.clone(),
        chol,
        alpha,
    })
}

/// [`gp_fit`], retrying once with the noise variance raised by
/// `JITTER_REL · mean(diag K)` if the factorization fails.
pub fn gp_fit_jittered(x: &[Vec<f64>], y: &[f64], hyper: &GpHyper) -> Result<GpModel, GpError> {
    match gp_fit(x, y, hyper) {
        Err(GpError::NotPositiveDefinite { .. }) => {
            let mut h = hyper.clone();
            h.noise_var += JITTER_REL * hyper.signal_var;
            gp_fit(x, y, &h)
        }
        other => other,
    }
}

/// Predictive mean and variance with their gradients in `x*`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveGrad {
    pub mean: f64,
    pub var: f64,
    pub d_mean: Vec<f64>,
    pub d_var: Vec<f64>,
}

impl GpModel {
    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    pub fn chol(&self) -> &Matrix {
        &self.chol
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn check_point(&self, xs: &[f64]) -> Result<(), GpError> {
        if xs.len() != self.hyper.dim() {
            return Err(GpError::DimensionMismatch {
                expected: self.hyper.dim(),
                got: xs.len(),
            });
        }
        Ok(())
    }

    /// Mean and variance before clamping the variance at zero.
    pub fn predict_unclamped(&self, xs: &[f64]) -> Result<(f64, f64), GpError> {
        self.check_point(xs)?;
        let ks: Vec<f64> = self.x.iter().map(|xi| k_unchecked(xs, xi, &self.hyper)).collect();
        let mu = self.hyper.mean + ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        let v = solve_lower(&self.chol, &ks);
        let nu = self.hyper.signal_var - v.iter().map(|a| a * a).sum::<f64>();
        Ok((mu, nu))
    }

    pub fn predict(&self, xs: &[f64]) -> Result<(f64, f64), GpError> {
        self.predict_unclamped(xs).map(|(m, v)| (m, v.max(0.0)))
    }

    /// Like [`predict`](Self::predict) but also returns `∂μ/∂x*` and
    /// `∂ν/∂x*` (the latter for the unclamped variance).
    pub fn predict_with_grad(&self, xs: &[f64]) -> Result<PredictiveGrad, GpError> {
        self.check_point(xs)?;
        let d = self.hyper.dim();
        let ks: Vec<f64> = self.x.iter().map(|xi| k_unchecked(xs, xi, &self.hyper)).collect();
        let mean = self.hyper.mean + ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        let w = cho_solve(&self.chol, &ks);
        let var = self.hyper.signal_var - ks.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let mut d_mean = vec![0.0; d];
        let mut d_var = vec![0.0; d];
        for (i, xi) in self.x.iter().enumerate() {
            for c in 0..d {
                let l2 = self.hyper.lengthscales[c].powi(2);
                let dk = -ks[i] * (xs[c] - xi[c]) / l2;
                d_mean[c] += self.alpha[i] * dk;
                d_var[c] -= 2.0 * w[i] * dk;
            }
        }
        Ok(PredictiveGrad {
            mean,
            var: var.max(0.0),
            d_mean,
            d_var,
        })
    }

    pub fn log_marginal(&self) -> f64 {
        let centered = self.y.iter().map(|v| v - self.hyper.mean);
        let fit: f64 = centered.zip(&self.alpha).map(|(a, b)| a * b).sum();
        -0.5 * fit - half_log_det(&self.chol) - 0.5 * self.len() as f64 * (2.0 * PI).ln()
    }

    /// Gradient of [`log_marginal`](Self::log_marginal) with respect to
    /// `[log σ_f², log ℓ_1.., log σ_n²]`, holding the mean fixed.
    pub fn log_marginal_grad(&self) -> Vec<f64> {
        let n = self.len();
        let d = self.hyper.dim();
        let kinv = cho_inverse(&self.chol);
        // A = ααᵀ − K⁻¹; each coordinate is ½ tr(A ∂K).
        let a = Matrix::from_fn(n, n, |i, j| self.alpha[i] * self.alpha[j] - kinv[(i, j)]);
        let mut g = vec![0.0; d + 2];
        for i in 0..n {
            for j in 0..n {
                let kf = k_unchecked(&self.x[i], &self.x[j], &self.hyper);
                g[0] += a[(i, j)] * kf;
                for c in 0..d {
                    let r = (self.x[i][c] - self.x[j][c]) / self.hyper.lengthscales[c];
                    g[1 + c] += a[(i, j)] * kf * r * r;
                }
            }
            g[d + 1] += a[(i, i)] * self.hyper.noise_var;
        }
        g.iter_mut().for_each(|v| *v *= 0.5);
        g
    }
}

/// Box constraints on `[log σ_f², log ℓ_1.., log σ_n²]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl HyperBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, GpError> {
        if lower.len() != upper.len() || lower.len() < 3 {
            return Err(GpError::InvalidBounds(format!(
                "need matching bound vectors of length d+2, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if let Some(i) =
            (0..lower.len()).find(|&i| !lower[i].is_finite() || !upper[i].is_finite() || lower[i] >= upper[i])
        {
            return Err(GpError::InvalidBounds(format!(
                "coordinate {i}: [{}, {}]",
                lower[i], upper[i]
            )));
        }
        Ok(Self { lower, upper })
    }

    /// Scale-aware defaults: lengthscales in `[1e-3, 1e3]` × input range,
    /// signal variance in `[1e-6, 1e6]` × var(y), noise variance in
    /// `[1e-8, 1]` × var(y).
    pub fn default_for(x: &[Vec<f64>], y: &[f64], d: usize) -> Self {
        let vy = {
            let n = y.len() as f64;
            let m = y.iter().sum::<f64>() / n.max(1.0);
            let v = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n.max(1.0);
            if v > 0.0 && v.is_finite() {
                v
            } else {
                1.0
            }
        };
        let mut lower = vec![(1e-6 * vy).ln()];
        let mut upper = vec![(1e6 * vy).ln()];
        for c in 0..d {
            let lo = x.iter().map(|r| r[c]).fold(f64::INFINITY, f64::min);
            let hi = x.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max);
            let range = if hi > lo { hi - lo } else { 1.0 };
            lower.push((1e-3 * range).ln());
            upper.push((1e3 * range).ln());
        }
        lower.push((1e-8 * vy).ln());
        upper.push(vy.ln());
        Self { lower, upper }
    }

    fn clamp(&self, v: &mut [f64]) {
        for ((x, lo), hi) in v.iter_mut().zip(&self.lower).zip(&self.upper) {
            *x = x.clamp(*lo, *hi);
        }
    }
}

fn objective(x: &[Vec<f64>], y: &[f64], log: &[f64], mean: f64) -> Option<(f64, Vec<f64>)> {
    let model = gp_fit(x, y, &GpHyper::from_log(log, mean)).ok()?;
    let lm = model.log_marginal();
    lm.is_finite().then(|| (lm, model.log_marginal_grad()))
}

/// Projected gradient ascent with backtracking from one start.
fn ascend(x: &[Vec<f64>], y: &[f64], bounds: &HyperBounds, start: Vec<f64>, mean: f64) -> Option<(f64, Vec<f64>)> {
    let mut theta = start;
    let (mut f, mut g) = objective(x, y, &theta, mean)?;
    let mut step = 1.0;
    for _ in 0..500 {
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < 1e-10 {
            break;
        }
        let mut improved = false;
        while step > 1e-12 {
            let mut cand: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t + step * gi / gnorm).collect();
            bounds.clamp(&mut cand);
            if cand == theta {
                break;
            }
            let gain: f64 = cand.iter().zip(&theta).zip(&g).map(|((a, b), gi)| (a - b) * gi).sum();
            match objective(x, y, &cand, mean) {
                Some((fc, gc)) if fc >= f + 1e-4 * gain && fc > f => {
                    let delta = fc - f;
                    theta = cand;
                    f = fc;
                    g = gc;
                    step = (step * 2.0).min(4.0);
                    improved = delta > 1e-10 * (1.0 + f.abs());
                    break;
                }
                _ => step *= 0.5,
            }
        }
        if !improved {
            break;
        }
    }
    Some((f, theta))
}

/// Maximizes the log marginal likelihood over the given starting points,
/// returning the best. Starts are clamped into `bounds`.
pub fn optimize_hyper_from(
    x: &[Vec<f64>],
    y: &[f64],
    bounds: &HyperBounds,
    starts: &[Vec<f64>],
) -> Result<GpHyper, GpError> {
    let mean = if y.is_empty() {
        0.0
    } else {
        y.iter().sum::<f64>() / y.len() as f64
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for s in starts {
        if s.len() != bounds.lower.len() {
            return Err(GpError::DimensionMismatch {
                expected: bounds.lower.len(),
                got: s.len(),
            });
        }
        let mut s = s.clone();
        bounds.clamp(&mut s);
        if let Some((f, t)) = ascend(x, y, bounds, s, mean) {
            if best.as_ref().is_none_or(|(bf, _)| f > *bf) {
                best = Some((f, t));
            }
        }
    }
    best.map(|(_, t)| GpHyper::from_log(&t, mean))
        .ok_or(GpError::AllRestartsFailed)
}

/// [`optimize_hyper_from`] with `restarts` starting points drawn uniformly
/// inside `bounds` from `stream`. The mean is fixed at `mean(y)`.
pub fn optimize_hyper(
    x: &[Vec<f64>],
    y: &[f64],
    bounds: &HyperBounds,
    restarts: usize,
    stream: &mut RngStream,
) -> Result<GpHyper, GpError> {
    HyperBounds::new(bounds.lower.clone(), bounds.upper.clone())?;
    if x.len() != y.len() {
        return Err(GpError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let starts: Vec<Vec<f64>> = (0..restarts)
        .map(|_| {
            bounds
                .lower
                .iter()
                .zip(&bounds.upper)
                .map(|(lo, hi)| lo + (hi - lo) * stream.uniform())
                .collect()
        })
        .collect();
    optimize_hyper_from(x, y, bounds, &starts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense_solve;
    use crate::rng::rng_stream;

    fn hyper(d: usize) -> GpHyper {
        GpHyper::new(1.3, (0..d).map(|i| 0.7 + 0.3 * i as f64).collect(), 1e-3, 0.2).unwrap()
    }

    fn random_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut s = rng_stream(seed, 0, "pts");
        (0..n)
            .map(|_| (0..d).map(|_| 4.0 * s.uniform() - 2.0).collect())
            .collect()
    }

    #[test]
    fn kernel_basics() {
        let h = hyper(2);
        assert_eq!(kernel(&[1.0, 2.0], &[1.0, 2.0], &h).unwrap(), 1.3);
        assert_eq!(
            kernel(&[0.3, 2.0], &[1.0, -1.0], &h).unwrap(),
            kernel(&[1.0, -1.0], &[0.3, 2.0], &h).unwrap()
        );
        let wide = GpHyper::new(2.0, vec![1e6], 0.0, 0.0).unwrap();
        assert!((kernel(&[0.0], &[3.0], &wide).unwrap() - 2.0).abs() < 1e-9);
        assert!(matches!(
            kernel(&[0.0], &[1.0, 2.0], &h),
            Err(GpError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn single_point_alpha() {
        let h = GpHyper::new(2.5, vec![1.0], 0.0, 0.5).unwrap();
        let m = gp_fit(&[vec![0.3]], &[4.0], &h).unwrap();
        assert!((m.alpha()[0] - (4.0 - 0.5) / 2.5).abs() < 1e-15);
    }

    #[test]
    fn duplicate_inputs_without_noise_fail_then_jitter_recovers() {
        let h = GpHyper::new(1.0, vec![1.0], 0.0, 0.0).unwrap();
        let x = vec![vec![0.5], vec![0.5]];
        let err = gp_fit(&x, &[1.0, 1.0], &h).unwrap_err();
        assert!(matches!(err, GpError::NotPositiveDefinite { index: 1, .. }));
        let m = gp_fit_jittered(&x, &[1.0, 1.0], &h).unwrap();
        assert!(m.hyper().noise_var > 0.0);
    }

    #[test]
    fn cholesky_reconstructs_kernel_matrix() {
        let h = hyper(2);
        let x = random_points(10, 2, 5);
        let m = gp_fit(&x, &[0.0; 10], &h).unwrap();
        let llt = m.chol().matmul(&m.chol().transpose());
        for i in 0..10 {
            for j in 0..10 {
                let k = kernel(&x[i], &x[j], &h).unwrap() + if i == j { h.noise_var } else { 0.0 };
                assert!((llt[(i, j)] - k).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn empty_model_is_prior_predictive() {
        let h = hyper(1);
        let m = gp_fit(&[], &[], &h).unwrap();
        assert_eq!(m.predict(&[0.4]).unwrap(), (0.2, 1.3));
        assert_eq!(m.log_marginal(), 0.0);
    }

    #[test]
    fn interpolates_training_points_without_noise() {
        let h = GpHyper::new(1.0, vec![0.8, 1.1], 0.0, 0.0).unwrap();
        let x = random_points(10, 2, 9);
        let y: Vec<f64> = x.iter().map(|p| p[0].sin() + p[1]).collect();
        let m = gp_fit(&x, &y, &h).unwrap();
        for (p, t) in x.iter().zip(&y) {
            let (mu, nu) = m.predict(p).unwrap();
            assert!((mu - t).abs() < 1e-8, "{mu} vs {t}");
            assert!(nu.abs() < 1e-8);
        }
    }

    #[test]
    fn predictions_match_dense_oracle() {
        let h = hyper(2);
        let x = random_points(10, 2, 11);
        let y: Vec<f64> = x.iter().map(|p| p[0] * p[1]).collect();
        let m = gp_fit(&x, &y, &h).unwrap();
        let ky = Matrix::from_fn(10, 10, |i, j| {
            kernel(&x[i], &x[j], &h).unwrap() + if i == j { h.noise_var } else { 0.0 }
        });
        let c: Vec<f64> = y.iter().map(|v| v - h.mean).collect();
        let a = dense_solve(&ky, &c).unwrap();
        for t in random_points(100, 2, 12) {
            let ks: Vec<f64> = x.iter().map(|xi| kernel(&t, xi, &h).unwrap()).collect();
            let mu = h.mean + ks.iter().zip(&a).map(|(p, q)| p * q).sum::<f64>();
            let b = dense_solve(&ky, &ks).unwrap();
            let nu = h.signal_var - ks.iter().zip(&b).map(|(p, q)| p * q).sum::<f64>();
            let (pm, pv) = m.predict_unclamped(&t).unwrap();
            assert!((pm - mu).abs() < 1e-8);
            assert!((pv - nu).abs() < 1e-8);
            assert!(pv > -1e-8);
        }
    }

    #[test]
    fn single_point_log_marginal() {
        let h = GpHyper::new(1.7, vec![1.0], 0.3, 2.0).unwrap();
        let m = gp_fit(&[vec![0.0]], &[2.0], &h).unwrap();
        assert!((m.log_marginal() + 0.5 * (2.0 * PI * 2.0).ln()).abs() < 1e-12);
    }

    fn lm_at(x: &[Vec<f64>], y: &[f64], log: &[f64], mean: f64) -> f64 {
        gp_fit(x, y, &GpHyper::from_log(log, mean)).unwrap().log_marginal()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..6 {
            let x = random_points(8, 2, 100 + seed);
            let y: Vec<f64> = x.iter().map(|p| (2.0 * p[0]).cos() + 0.5 * p[1]).collect();
            let h = GpHyper::new(0.9, vec![0.6, 1.4], 0.05, 0.1).unwrap();
            let g = gp_fit(&x, &y, &h).unwrap().log_marginal_grad();
            let base = h.to_log();
            for k in 0..base.len() {
                let mut p = base.clone();
                let mut q = base.clone();
                p[k] += 1e-5;
                q[k] -= 1e-5;
                let fd = (lm_at(&x, &y, &p, h.mean) - lm_at(&x, &y, &q, h.mean)) / 2e-5;
                let rel = (g[k] - fd).abs() / fd.abs().max(1e-6);
                assert!(rel < 1e-4, "seed {seed} coord {k}: {} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn predictive_gradient_matches_finite_differences() {
        let x = random_points(7, 2, 3);
        let y: Vec<f64> = x.iter().map(|p| p[0] - p[1] * p[1]).collect();
        let m = gp_fit(&x, &y, &hyper(2)).unwrap();
        let t = [0.31, -0.42];
        let pg = m.predict_with_grad(&t).unwrap();
        for c in 0..2 {
            let mut a = t;
            let mut b = t;
            a[c] += 1e-6;
            b[c] -= 1e-6;
            let (ma, va) = m.predict_unclamped(&a).unwrap();
            let (mb, vb) = m.predict_unclamped(&b).unwrap();
            assert!((pg.d_mean[c] - (ma - mb) / 2e-6).abs() < 1e-6);
            assert!((pg.d_var[c] - (va - vb) / 2e-6).abs() < 1e-6);
        }
    }

    #[test]
    fn translation_equivariance() {
        let h = hyper(2);
        let x = random_points(10, 2, 21);
        let y: Vec<f64> = x.iter().map(|p| p[0] + p[1]).collect();
        let shift = [3.5, -1.25];
        let xs: Vec<Vec<f64>> = x.iter().map(|p| vec![p[0] + shift[0], p[1] + shift[1]]).collect();
        let a = gp_fit(&x, &y, &h).unwrap();
        let b = gp_fit(&xs, &y, &h).unwrap();
        for t in random_points(20, 2, 22) {
            let ts = [t[0] + shift[0], t[1] + shift[1]];
            let (ma, va) = a.predict(&t).unwrap();
            let (mb, vb) = b.predict(&ts).unwrap();
            assert!((ma - mb).abs() < 1e-10 && (va - vb).abs() < 1e-10);
        }
    }

    #[test]
    fn duplicate_observation_sanity() {
        // Recorded as a numeric check on a fixed fixture, not an identity.
        let h = GpHyper::new(1.0, vec![0.5], 0.1, 0.0).unwrap();
        let x = vec![vec![0.0], vec![0.5], vec![1.0]];
        let y = [0.1, 0.7, -0.2];
        let base = gp_fit(&x, &y, &h).unwrap().log_marginal() / 3.0;
        let mut x2 = x.clone();
        x2.push(vec![0.5]);
        let dup = gp_fit(&x2, &[0.1, 0.7, -0.2, 0.7], &h).unwrap().log_marginal() / 4.0;
        assert!(dup.is_finite() && base.is_finite());
    }

    #[test]
    fn recovers_lengthscale_from_kernel_samples() {
        let truth = GpHyper::new(1.0, vec![0.5], 1e-4, 0.0).unwrap();
        let mut s = rng_stream(7, 0, "fixture");
        let x: Vec<Vec<f64>> = (0..60).map(|_| vec![5.0 * s.uniform()]).collect();
        let k = Matrix::from_fn(60, 60, |i, j| {
            kernel(&x[i], &x[j], &truth).unwrap() + if i == j { 1e-4 } else { 0.0 }
        });
        let l = cholesky(&k, 1e-14).unwrap();
        let z: Vec<f64> = (0..60).map(|_| s.standard_normal()).collect();
        let y = l.matvec(&z);
        let bounds = HyperBounds::default_for(&x, &y, 1);
        let h = optimize_hyper(&x, &y, &bounds, 5, &mut rng_stream(1, 0, "opt")).unwrap();
        let ratio = h.lengthscales[0] / 0.5;
        assert!((0.5..2.0).contains(&ratio), "lengthscale {}", h.lengthscales[0]);
    }

    #[test]
    fn optimizer_is_deterministic_and_checks_bounds() {
        let x = random_points(12, 1, 4);
        let y: Vec<f64> = x.iter().map(|p| p[0].sin()).collect();
        let b = HyperBounds::default_for(&x, &y, 1);
        let a1 = optimize_hyper(&x, &y, &b, 1, &mut rng_stream(3, 0, "o")).unwrap();
        let a2 = optimize_hyper(&x, &y, &b, 1, &mut rng_stream(3, 0, "o")).unwrap();
        assert_eq!(a1, a2);
        assert!(HyperBounds::new(vec![0.0, 1.0, 0.0], vec![1.0, 0.5, 1.0]).is_err());
        let bad = HyperBounds {
            lower: vec![0.0, 1.0, 0.0],
            upper: vec![1.0, 1.0, 1.0],
        };
        assert!(matches!(
            optimize_hyper(&x, &y, &bad, 1, &mut rng_stream(3, 0, "o")),
            Err(GpError::InvalidBounds(_))
        ));
    }
}
