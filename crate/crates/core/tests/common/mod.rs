#![allow(dead_code)]

use lfi_core::cli::model_file::{parse_model, ModelFile};
use lfi_core::components::simulate_ma2;
use lfi_core::graph::{GraphSpec, NodeSpec, OpRef};
use lfi_core::ops::OpRegistry;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

pub const PRIOR_SD: f64 = 10.0;
pub const NOISE_SD: f64 = 1.0;

pub fn example(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

pub fn load(name: &str) -> ModelFile {
    parse_model(example(name)).expect("shipped example parses")
}

/// Gaussian mean model: mu ~ normal(0, 10), 30 draws of normal(mu, 1),
/// summary = sample mean.
pub fn gaussian_spec(observed: Vec<f64>) -> GraphSpec {
    let n = observed.len() as f64;
    let nodes = vec![
        NodeSpec::prior("mu", "normal").args(vec![0.0, PRIOR_SD]),
        NodeSpec::simulator("sim", OpRef::builtin("gaussian"))
            .parents(["mu"])
            .args(vec![NOISE_SD, n]),
        NodeSpec::summary("S", "mean").parents(["sim"]),
        NodeSpec::distance("d", "euclidean").parents(["S"]),
    ];
    GraphSpec::from_parts(nodes, BTreeMap::from([("sim".to_string(), observed)]))
}

/// Exact normal-normal posterior `(mean, sd)` of mu for the Gaussian model.
pub fn conjugate_posterior(observed: &[f64]) -> (f64, f64) {
    let n = observed.len() as f64;
    let ybar = observed.iter().sum::<f64>() / n;
    let precision = 1.0 / PRIOR_SD.powi(2) + n / NOISE_SD.powi(2);
    let mean = (n / NOISE_SD.powi(2)) * ybar / precision;
    (mean, precision.recip().sqrt())
}

pub fn observed_of(model: &ModelFile, node: &str) -> Vec<f64> {
    model.graph.observed()[node].clone()
}

pub fn weighted_sd(values: &[f64], weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    let mean = values.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>() / total;
    (values
        .iter()
        .zip(weights)
        .map(|(x, w)| w * (x - mean).powi(2))
        .sum::<f64>()
        / total)
        .sqrt()
}

/// Builtin registry plus `counted_ma2`, which counts element evaluations.
pub fn counting_registry() -> (OpRegistry, Arc<AtomicUsize>) {
    let calls = Arc::new(AtomicUsize::new(0));
    let mut r = OpRegistry::builtin();
    let c = Arc::clone(&calls);
    r.register_fn("counted_ma2", move |inputs, args, rng| {
        c.fetch_add(1, Ordering::SeqCst);
        simulate_ma2(inputs[0][0], inputs[1][0], args[0] as usize, rng).map_err(|e| e.to_string())
    });
    (r, calls)
}

/// The shipped MA(2) model with its simulator swapped for `counted_ma2`.
pub fn counted_ma2_spec() -> GraphSpec {
    let spec = load("ma2.json").graph;
    let sim = spec.node("sim").unwrap().clone();
    let counted = NodeSpec {
        op: OpRef::builtin("counted_ma2"),
        ..sim
    };
    spec.replace_node("sim", counted).unwrap()
}
