//! Ready-made simulators, summaries and distances.

use crate::rng::RngStream;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComponentError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("empty input (need at least {0} values)")]
    EmptyInput(usize),
    #[error("lag {lag} too large for series of length {len}")]
    LagTooLarge { lag: usize, len: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

/// MA(2) series `y_t = w_t + t1 w_{t-1} + t2 w_{t-2}` with i.i.d. standard
/// normal `w`. Draws `w_{-1}, w_0` first, then `w_1..w_n`.
pub fn simulate_ma2(t1: f64, t2: f64, n_obs: usize, stream: &mut RngStream) -> Result<Vec<f64>, ComponentError> {
    if n_obs < 3 {
        return Err(ComponentError::InvalidParams(format!(
            "MA(2) needs n_obs >= 3, got {n_obs}"
        )));
    }
    let w: Vec<f64> = (0..n_obs + 2).map(|_| stream.standard_normal()).collect();
    Ok((2..n_obs + 2).map(|t| w[t] + t1 * w[t - 1] + t2 * w[t - 2]).collect())
}

pub fn simulate_gaussian(
    mu: f64,
    sigma: f64,
    n_obs: usize,
    stream: &mut RngStream,
) -> Result<Vec<f64>, ComponentError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(ComponentError::InvalidParams(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    Ok((0..n_obs).map(|_| mu + sigma * stream.standard_normal()).collect())
}

pub fn summary_mean(y: &[f64]) -> Result<f64, ComponentError> {
    if y.is_empty() {
        return Err(ComponentError::EmptyInput(1));
    }
    Ok(y.iter().sum::<f64>() / y.len() as f64)
}

/// Unbiased sample variance (divisor n - 1), two-pass.
pub fn summary_variance(y: &[f64]) -> Result<f64, ComponentError> {
    if y.len() < 2 {
        return Err(ComponentError::EmptyInput(2));
    }
    let m = summary_mean(y)?;
    let ss: f64 = y.iter().map(|v| (v - m) * (v - m)).sum();
    Ok(ss / (y.len() - 1) as f64)
}

/// Non-centered autocovariance `(1/n) Σ_{t>k} y_t y_{t-k}`.
pub fn summary_autocov(y: &[f64], lag: usize) -> Result<f64, ComponentError> {
    if lag >= y.len() {
        return Err(ComponentError::LagTooLarge { lag, len: y.len() });
    }
    let s: f64 = y[lag..].iter().zip(y).map(|(a, b)| a * b).sum();
    Ok(s / y.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub enum DistanceSpec {
    Minkowski { p: f64 },
    WeightedEuclidean { weights: Vec<f64> },
}

impl DistanceSpec {
    pub fn euclidean() -> Self {
        Self::Minkowski { p: 2.0 }
    }

    pub fn minkowski(p: f64) -> Result<Self, ComponentError> {
        if p.is_nan() || p < 1.0 {
            return Err(ComponentError::InvalidParams(format!(
                "minkowski p must be >= 1, got {p}"
            )));
        }
        Ok(Self::Minkowski { p })
    }

    pub fn weighted_euclidean(weights: Vec<f64>) -> Result<Self, ComponentError> {
        if weights.iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(ComponentError::InvalidParams("weights must be nonnegative".into()));
        }
        Ok(Self::WeightedEuclidean { weights })
    }
}

pub fn distance(sim: &[f64], obs: &[f64], spec: &DistanceSpec) -> Result<f64, ComponentError> {
    if sim.len() != obs.len() {
        return Err(ComponentError::DimensionMismatch(sim.len(), obs.len()));
    }
    let diffs = sim.iter().zip(obs).map(|(a, b)| (a - b).abs());
    Ok(match spec {
        DistanceSpec::Minkowski { p } if *p == 2.0 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
        DistanceSpec::Minkowski { p } if *p == 1.0 => diffs.sum(),
        DistanceSpec::Minkowski { p } => diffs.map(|d| d.powf(*p)).sum::<f64>().powf(1.0 / p),
        DistanceSpec::WeightedEuclidean { weights } => {
            if weights.len() != sim.len() {
                return Err(ComponentError::DimensionMismatch(weights.len(), sim.len()));
            }
            diffs.zip(weights).map(|(d, w)| w * d * d).sum::<f64>().sqrt()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_stream;
    use proptest::prelude::*;

    #[test]
    fn ma2_identity_case_is_white_noise() {
        let y = simulate_ma2(0.0, 0.0, 20, &mut rng_stream(1, 0, "sim")).unwrap();
        let mut s = rng_stream(1, 0, "sim");
        let w: Vec<f64> = (0..22).map(|_| s.standard_normal()).collect();
        assert_eq!(y, w[2..]);
    }

    #[test]
    fn ma2_deterministic_and_lag1_autocov() {
        let a = simulate_ma2(0.6, 0.2, 50, &mut rng_stream(2, 0, "sim")).unwrap();
        let b = simulate_ma2(0.6, 0.2, 50, &mut rng_stream(2, 0, "sim")).unwrap();
        assert_eq!(a, b);
        let y = simulate_ma2(0.6, 0.2, 100_000, &mut rng_stream(3, 0, "sim")).unwrap();
        // gamma_1 = t1 + t1 t2 = 0.72
        let g1 = summary_autocov(&y, 1).unwrap();
        assert!((g1 - 0.72).abs() < 0.03, "{g1}");
        assert!(simulate_ma2(0.1, 0.1, 2, &mut rng_stream(0, 0, "s")).is_err());
    }

    #[test]
    fn gaussian_affine_and_variance() {
        let z = simulate_gaussian(0.0, 1.0, 10, &mut rng_stream(4, 0, "g")).unwrap();
        let y = simulate_gaussian(3.0, 2.0, 10, &mut rng_stream(4, 0, "g")).unwrap();
        for (a, b) in z.iter().zip(&y) {
            assert!((3.0 + 2.0 * a - b).abs() < 1e-12);
        }
        let big = simulate_gaussian(0.0, 1.0, 100_000, &mut rng_stream(5, 0, "g")).unwrap();
        let v = summary_variance(&big).unwrap();
        assert!((v - 1.0).abs() < 0.02, "{v}");
        assert!(simulate_gaussian(0.0, 0.0, 3, &mut rng_stream(0, 0, "g")).is_err());
    }

    #[test]
    fn summaries() {
        assert_eq!(summary_mean(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(summary_variance(&[4.0; 7]).unwrap(), 0.0);
        assert_eq!(summary_mean(&[]), Err(ComponentError::EmptyInput(1)));
        assert_eq!(summary_autocov(&[0.0; 10], 1).unwrap(), 0.0);
        assert_eq!(summary_autocov(&[1.0; 4], 1).unwrap(), 0.75);
        assert_eq!(summary_autocov(&[1.0, -1.0, 1.0, -1.0], 1).unwrap(), -0.75);
        assert!(matches!(
            summary_autocov(&[1.0, 2.0], 2),
            Err(ComponentError::LagTooLarge { .. })
        ));
    }

    #[test]
    fn autocov_lag0_of_unit_noise() {
        let y = simulate_gaussian(0.0, 1.0, 100_000, &mut rng_stream(6, 0, "g")).unwrap();
        assert!((summary_autocov(&y, 0).unwrap() - 1.0).abs() < 0.03);
    }

    #[test]
    fn variance_vs_naive_oracle() {
        let y = simulate_gaussian(5.0, 2.0, 1000, &mut rng_stream(7, 0, "g")).unwrap();
        // Oracle: mean by explicit loop, then sum of squares by explicit loop.
        let mut total = 0.0;
        for v in &y {
            total += v;
        }
        let m = total / y.len() as f64;
        let mut ss = 0.0;
        for v in &y {
            ss += (v - m).powi(2);
        }
        let oracle = ss / (y.len() as f64 - 1.0);
        let got = summary_variance(&y).unwrap();
        assert!(((got - oracle) / oracle).abs() < 1e-12);
        assert!(((summary_mean(&y).unwrap() - m) / m).abs() < 1e-12);
    }

    #[test]
    fn distance_examples() {
        let e = DistanceSpec::euclidean();
        assert_eq!(distance(&[0.0, 0.0], &[3.0, 4.0], &e).unwrap(), 5.0);
        assert_eq!(distance(&[1.0, 2.0], &[1.0, 2.0], &e).unwrap(), 0.0);
        assert_eq!(
            distance(&[1.0, 2.0], &[2.0, 4.0], &DistanceSpec::minkowski(1.0).unwrap()).unwrap(),
            3.0
        );
        let w = DistanceSpec::weighted_euclidean(vec![4.0, 0.0]).unwrap();
        assert_eq!(distance(&[1.0, 9.0], &[0.0, 0.0], &w).unwrap(), 2.0);
        assert!(distance(&[1.0], &[1.0, 2.0], &e).is_err());
        assert!(DistanceSpec::minkowski(0.5).is_err());
    }

    proptest! {
        #[test]
        fn minkowski_metric_axioms(
            a in prop::collection::vec(-100.0f64..100.0, 3),
            b in prop::collection::vec(-100.0f64..100.0, 3),
            c in prop::collection::vec(-100.0f64..100.0, 3),
            p in 1.0f64..5.0,
        ) {
            let s = DistanceSpec::minkowski(p).unwrap();
            let ab = distance(&a, &b, &s).unwrap();
            let ba = distance(&b, &a, &s).unwrap();
            let ac = distance(&a, &c, &s).unwrap();
            let cb = distance(&c, &b, &s).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
            prop_assert_eq!(distance(&a, &a, &s).unwrap(), 0.0);
            prop_assert!(ab <= ac + cb + 1e-9 * (ac + cb).max(1.0));
        }
    }
}
