//! Prior families: sampling from keyed streams and exact log densities.

use crate::linalg::{cholesky, solve_lower, Matrix};
use crate::rng::RngStream;
use thiserror::Error;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative pivot floor for covariance factorizations.
pub const MVN_PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("invalid parameters for {family}: {reason}")]
    InvalidParams { family: &'static str, reason: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown distribution family '{0}'")]
    UnknownFamily(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DistSpec {
    /// Half-open support `[a, b)`.
    Uniform {
        a: f64,
        b: f64,
    },
    Normal {
        mu: f64,
        sigma: f64,
    },
    MultivariateNormal {
        mean: Vec<f64>,
        cov: Matrix,
        chol: Matrix,
    },
}

impl DistSpec {
    pub fn uniform(a: f64, b: f64) -> Result<Self, DistError> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(DistError::InvalidParams {
                family: "uniform",
                reason: format!("require finite a < b, got a={a}, b={b}"),
            });
        }
        Ok(Self::Uniform { a, b })
    }

    pub fn normal(mu: f64, sigma: f64) -> Result<Self, DistError> {
        if !(mu.is_finite() && sigma.is_finite() && sigma > 0.0) {
            return Err(DistError::InvalidParams {
                family: "normal",
                reason: format!("require finite mu and sigma > 0, got mu={mu}, sigma={sigma}"),
            });
        }
        Ok(Self::Normal { mu, sigma })
    }

    pub fn multivariate_normal(mean: Vec<f64>, cov: Matrix) -> Result<Self, DistError> {
        let d = mean.len();
        let invalid = |reason: String| DistError::InvalidParams {
            family: "multivariate_normal",
            reason,
        };
        if d == 0 {
            return Err(invalid("empty mean".into()));
        }
        if cov.rows() != d || cov.cols() != d {
            return Err(DistError::DimensionMismatch {
                expected: d,
                got: cov.rows(),
            });
        }
        if !cov.is_symmetric(1e-12) {
            return Err(invalid("covariance not symmetric".into()));
        }
        let chol = cholesky(&cov, MVN_PIVOT_TOL).map_err(|f| {
            invalid(format!(
                "covariance not positive definite (pivot {} = {:e})",
                f.index, f.pivot
            ))
        })?;
        Ok(Self::MultivariateNormal { mean, cov, chol })
    }

    /// Builds a spec from a family name and a flat parameter vector:
    /// `uniform [a, b]`, `normal [mu, sigma]`, `mvn [mean(d), cov(d*d row-major)]`.
    pub fn from_params(family: &str, params: &[f64]) -> Result<Self, DistError> {
        match family {
            "uniform" => {
                expect_len("uniform", params, 2)?;
                Self::uniform(params[0], params[1])
            }
            "normal" => {
                expect_len("normal", params, 2)?;
                Self::normal(params[0], params[1])
            }
            "mvn" | "multivariate_normal" => {
                let l = params.len();
                let d = ((((1 + 4 * l) as f64).sqrt() - 1.0) / 2.0).round() as usize;
                if d == 0 || d + d * d != l {
                    return Err(DistError::InvalidParams {
                        family: "multivariate_normal",
                        reason: format!("{l} parameters is not d + d^2 for any d"),
                    });
                }
                let cov = Matrix::from_rows(d, d, params[d..].to_vec());
                Self::multivariate_normal(params[..d].to_vec(), cov)
            }
            other => Err(DistError::UnknownFamily(other.to_string())),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Uniform { .. } | Self::Normal { .. } => 1,
            Self::MultivariateNormal { mean, .. } => mean.len(),
        }
    }

    /// Draws `n` values, each of length `dim()`, concatenated.
    pub fn sample(&self, stream: &mut RngStream, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n * self.dim());
        for _ in 0..n {
            self.sample_one_into(stream, &mut out);
        }
        out
    }

    fn sample_one_into(&self, stream: &mut RngStream, out: &mut Vec<f64>) {
        match self {
            Self::Uniform { a, b } => {
                let x = a + (b - a) * stream.uniform();
                // Rounding can land on b; keep the support half-open.
                out.push(if x >= *b { b.next_down() } else { x });
            }
            Self::Normal { mu, sigma } => out.push(mu + sigma * stream.standard_normal()),
            Self::MultivariateNormal { mean, chol, .. } => {
                let z: Vec<f64> = (0..mean.len()).map(|_| stream.standard_normal()).collect();
                let lz = chol.matvec(&z);
                out.extend(mean.iter().zip(lz).map(|(m, v)| m + v));
            }
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64, DistError> {
        if x.len() != self.dim() {
            return Err(DistError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(match self {
            Self::Uniform { a, b } => {
                if x[0] >= *a && x[0] < *b {
                    -(b - a).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Self::Normal { mu, sigma } => {
                let z = (x[0] - mu) / sigma;
                -0.5 * z * z - sigma.ln() - 0.5 * LN_2PI
            }
            Self::MultivariateNormal { mean, chol, .. } => {
                let diff: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
                let w = solve_lower(chol, &diff);
                let quad: f64 = w.iter().map(|v| v * v).sum();
                let half_logdet: f64 = chol.diag().iter().map(|d| d.ln()).sum();
                -0.5 * quad - half_logdet - 0.5 * mean.len() as f64 * LN_2PI
            }
        })
    }
}

fn expect_len(family: &'static str, params: &[f64], n: usize) -> Result<(), DistError> {
    if params.len() != n {
        return Err(DistError::InvalidParams {
            family,
            reason: format!("expected {n} parameters, got {}", params.len()),
        });
    }
    Ok(())
}
