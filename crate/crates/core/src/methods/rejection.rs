//! Rejection ABC.

use super::{
    check_inferable, sort_by_distance, InferenceError, InferenceResult, ParameterLayout, Progress, ProgressFn,
};
use crate::executor::{Batch, Executor};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Acceptance {
    /// Keep the best fraction `q` of a fixed simulation budget.
    Quantile(f64),
    /// Keep draws with distance `<= ε` until enough are accepted.
    Threshold(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectionConfig {
    pub n_samples: usize,
    pub acceptance: Acceptance,
    /// Simulation cap for threshold mode.
    pub budget: Option<u64>,
    /// Parameter nodes to report; empty means every prior.
    pub parameters: Vec<String>,
}

impl RejectionConfig {
    pub fn quantile(n_samples: usize, q: f64) -> Self {
        Self {
            n_samples,
            acceptance: Acceptance::Quantile(q),
            budget: None,
            parameters: Vec::new(),
        }
    }

    pub fn threshold(n_samples: usize, epsilon: f64) -> Self {
        Self {
            n_samples,
            acceptance: Acceptance::Threshold(epsilon),
            budget: None,
            parameters: Vec::new(),
        }
    }

    pub fn budget(mut self, max_simulations: u64) -> Self {
        self.budget = Some(max_simulations);
        self
    }
}

fn check_quantile(q: f64) -> Result<(), InferenceError> {
    if q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(InferenceError::BadQuantile(q))
    }
}

/// The `k`-th smallest distance (1-based).
pub(crate) fn kth_smallest(distances: &[f64], k: usize) -> f64 {
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[k.clamp(1, sorted.len()) - 1]
}

/// The `⌈q·n⌉`-th smallest distance.
pub fn threshold_from_quantile(distances: &[f64], q: f64) -> Result<f64, InferenceError> {
    if distances.is_empty() {
        return Err(InferenceError::EmptyInput);
    }
    check_quantile(q)?;
    // The small offset keeps q·n that should be an integer from rounding up.
    let k = ((q * distances.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(kth_smallest(distances, k))
}

/// Accepted draws before ordering, in draw order.
pub(crate) struct Draws {
    pub samples: Vec<Vec<f64>>,
    pub distances: Vec<f64>,
    pub n_sim: u64,
}

fn collect(layout: &ParameterLayout, distance: &str, batches: &[Batch], out: &mut Draws) {
    for b in batches {
        let d = b.get(distance).expect("distance computed");
        for e in 0..b.batch_size() {
            out.samples.push(layout.extract(b, e));
            out.distances.push(d.element(e)[0]);
        }
        out.n_sim += b.batch_size() as u64;
    }
}

fn chunk_len(exec: &Executor<'_>) -> u64 {
    (exec.worker_count() as u64 * 8).max(1)
}

/// Quantile mode: simulates `⌈⌈n/q⌉ / B⌉·B` draws and keeps every draw at
/// or below the `min(n, N)`-th smallest distance. Returns the accepted
/// draws in draw order and the threshold.
pub(crate) fn quantile_draws(
    exec: &Executor<'_>,
    layout: &ParameterLayout,
    distance: &str,
    n_samples: usize,
    q: f64,
    progress: ProgressFn<'_>,
    method: &'static str,
) -> Result<(Draws, f64), InferenceError> {
    check_quantile(q)?;
    if n_samples == 0 {
        return Err(InferenceError::InvalidConfig("n_samples must be positive".into()));
    }
    let bs = exec.batch_size() as u64;
    let wanted = (n_samples as f64 / q).ceil() as u64;
    let n_batches = wanted.div_ceil(bs);
    let mut all = Draws {
        samples: Vec::new(),
        distances: Vec::new(),
        n_sim: 0,
    };
    let chunk = chunk_len(exec);
    let mut start = 0;
    while start < n_batches {
        let end = (start + chunk).min(n_batches);
        let indices: Vec<u64> = (start..end).collect();
        let batches = exec.run_indices(&indices)?;
        collect(layout, distance, &batches, &mut all);
        progress(&Progress {
            method,
            stage: format!("batch {end}/{n_batches}"),
            n_sim: all.n_sim,
            accepted: 0,
            threshold: None,
        });
        start = end;
    }
    let k = n_samples.min(all.distances.len());
    let threshold = kth_smallest(&all.distances, k);
    let mut accepted = Draws {
        samples: Vec::new(),
        distances: Vec::new(),
        n_sim: all.n_sim,
    };
    for (s, d) in all.samples.into_iter().zip(all.distances) {
        if d <= threshold {
            accepted.samples.push(s);
            accepted.distances.push(d);
        }
    }
    Ok((accepted, threshold))
}

pub(crate) fn finish(
    method: &str,
    layout: &ParameterLayout,
    draws: Draws,
    threshold: f64,
    exec: &Executor<'_>,
    started: Instant,
) -> InferenceResult {
    let n = draws.distances.len();
    let weights = vec![1.0 / n as f64; n];
    let (samples, distances, weights) = sort_by_distance(draws.samples, draws.distances, weights);
    InferenceResult {
        method: method.to_string(),
        parameter_names: layout.names().to_vec(),
        samples,
        weights,
        distances,
        threshold,
        n_sim: draws.n_sim,
        root_seed: exec.root_seed(),
        batch_size: exec.batch_size(),
        partial: false,
        rounds: Vec::new(),
        surrogate: None,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    }
}

pub fn sample_rejection(exec: &Executor<'_>, cfg: &RejectionConfig) -> Result<InferenceResult, InferenceError> {
    sample_rejection_with_progress(exec, cfg, &mut |_| {})
}

pub fn sample_rejection_with_progress(
    exec: &Executor<'_>,
    cfg: &RejectionConfig,
    progress: ProgressFn<'_>,
) -> Result<InferenceResult, InferenceError> {
    let started = Instant::now();
    let cg = exec.graph();
    let distance = check_inferable(cg)?;
    let layout = ParameterLayout::new(cg, &cfg.parameters)?;
    match cfg.acceptance {
        Acceptance::Quantile(q) => {
            if let Some(budget) = cfg.budget {
                let needed = ((cfg.n_samples as f64 / q).ceil() as u64).div_ceil(exec.batch_size() as u64)
                    * exec.batch_size() as u64;
                if needed > budget {
                    return Err(InferenceError::InvalidConfig(format!(
                        "quantile {q} needs {needed} simulations, above the budget of {budget}"
                    )));
                }
            }
            let (draws, threshold) = quantile_draws(exec, &layout, distance, cfg.n_samples, q, progress, "rejection")?;
            Ok(finish("rejection", &layout, draws, threshold, exec, started))
        }
        Acceptance::Threshold(eps) => {
            if eps.is_nan() || eps < 0.0 {
                return Err(InferenceError::InvalidConfig(format!(
                    "threshold must be nonnegative, got {eps}"
                )));
            }
            if cfg.n_samples == 0 {
                return Err(InferenceError::InvalidConfig("n_samples must be positive".into()));
            }
            let budget = cfg.budget.unwrap_or(u64::MAX);
            let mut draws = Draws {
                samples: Vec::new(),
                distances: Vec::new(),
                n_sim: 0,
            };
            let keep: Vec<&str> = layout.node_names().chain([distance]).collect();
            let mut stream = exec.generate(0).keep(&keep);
            while draws.distances.len() < cfg.n_samples && draws.n_sim < budget {
                let Some(batch) = stream.next() else { break };
                let batch = batch?;
                let d = batch.get(distance).expect("distance computed");
                for e in 0..batch.batch_size() {
                    if draws.distances.len() < cfg.n_samples && d.element(e)[0] <= eps {
                        draws.samples.push(layout.extract(&batch, e));
                        draws.distances.push(d.element(e)[0]);
                    }
                }
                draws.n_sim += batch.batch_size() as u64;
                progress(&Progress {
                    method: "rejection",
                    stage: format!("batch {}", batch.batch_index()),
                    n_sim: draws.n_sim,
                    accepted: draws.distances.len(),
                    threshold: Some(eps),
                });
            }
            let complete = draws.distances.len() >= cfg.n_samples;
            let mut result = finish("rejection", &layout, draws, eps, exec, started);
            if complete {
                Ok(result)
            } else {
                result.partial = true;
                Err(InferenceError::BudgetExhausted {
                    partial: Box::new(result),
                })
            }
        }
    }
}
