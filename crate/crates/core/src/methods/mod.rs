//! Inference methods and the types they share.

pub mod bolfi;
pub mod rejection;
pub mod smc;

use crate::distributions::DistSpec;
use crate::executor::{Batch, ExecError, NodeValues};
use crate::gp::GpError;
use crate::graph::{CompiledGraph, GraphError, NodeKind, Violation};
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

pub use bolfi::{fit_bolfi, lcb_acquisition, posterior_logpdf, sample_posterior, BolfiConfig, BolfiPosterior};
pub use rejection::{sample_rejection, threshold_from_quantile, Acceptance, RejectionConfig};
pub use smc::{sample_smc, weighted_cov, Population, SmcConfig};

/// Per-round diagnostics for population methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub threshold: f64,
    pub n_sim: u64,
    pub n_accepted: usize,
    pub ess: f64,
}

/// Surrogate diagnostics recorded by BOLFI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSummary {
    pub epsilon: f64,
    pub log_transform: bool,
    pub n_train: usize,
    pub argmin: Vec<f64>,
    pub signal_var: f64,
    pub lengthscales: Vec<f64>,
    pub noise_var: f64,
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub method: String,
    pub parameter_names: Vec<String>,
    /// One row per accepted sample, columns in `parameter_names` order.
    pub samples: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub distances: Vec<f64>,
    pub threshold: f64,
    pub n_sim: u64,
    pub root_seed: u64,
    pub batch_size: usize,
    #[serde(default)]
    pub partial: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rounds: Vec<RoundSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surrogate: Option<SurrogateSummary>,
    /// Wall-clock time; not serialized so result files stay reproducible.
    #[serde(skip)]
    pub elapsed_seconds: f64,
}

impl InferenceResult {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `1 / Σ w²`.
    pub fn ess(&self) -> f64 {
        ess(&self.weights)
    }

    /// Weighted mean of each parameter column.
    pub fn weighted_mean(&self) -> Vec<f64> {
        let d = self.parameter_names.len();
        let mut m = vec![0.0; d];
        for (row, w) in self.samples.iter().zip(&self.weights) {
            for (acc, x) in m.iter_mut().zip(row) {
                *acc += w * x;
            }
        }
        m
    }
}

pub fn ess(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("graph cannot be used for inference: {}", list(.0))]
    NotInferable(Vec<Violation>),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty input")]
    EmptyInput,
    #[error("quantile must lie in (0, 1], got {0}")]
    BadQuantile(f64),
    #[error("simulation budget exhausted after {} simulations with {} of the requested samples", .partial.n_sim, .partial.len())]
    BudgetExhausted { partial: Box<InferenceResult> },
    #[error("round {round}: threshold {current} exceeds previous {previous}")]
    ScheduleNotShrinking { round: usize, previous: f64, current: f64 },
    #[error("round {round}: weights are degenerate")]
    DegenerateWeights { round: usize },
    #[error("round {round}: perturbation kernel covariance is singular")]
    SingularKernel { round: usize },
    #[error("round {round}: no proposal with positive prior density after {attempts} attempts")]
    ProposalsExhausted { round: usize, attempts: usize },
    #[error("need at least {required} initial points, got {n_init}")]
    InsufficientInit { n_init: usize, required: usize },
    #[error("point {0:?} lies outside the bounds")]
    OutOfBounds(Vec<f64>),
    #[error("sampler stuck: acceptance rate {0} after warm-up")]
    ChainStuck(f64),
}

fn list(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Progress reported between batches, rounds or acquisitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Progress {
    pub method: &'static str,
    pub stage: String,
    pub n_sim: u64,
    pub accepted: usize,
    pub threshold: Option<f64>,
}

impl fmt::Display for Progress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: {} simulations, {} accepted",
            self.method, self.stage, self.n_sim, self.accepted
        )?;
        if let Some(t) = self.threshold {
            write!(f, ", threshold {t:.6e}")?;
        }
        Ok(())
    }
}

/// Receives [`Progress`] updates; `&mut |_| {}` ignores them.
pub type ProgressFn<'a> = &'a mut dyn FnMut(&Progress);

/// Fails unless the graph has priors and exactly one distance node.
pub fn check_inferable(cg: &CompiledGraph) -> Result<&str, InferenceError> {
    let bad: Vec<Violation> = cg
        .inference_violations()
        .into_iter()
        .filter(Violation::inference_only)
        .collect();
    if !bad.is_empty() {
        return Err(InferenceError::NotInferable(bad));
    }
    Ok(cg.distance_node().expect("exactly one distance node"))
}

/// Which prior nodes form the parameter vector, and in what order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterLayout {
    nodes: Vec<(String, usize)>,
    names: Vec<String>,
}

impl ParameterLayout {
    /// `selected` empty means every prior node in declaration order.
    /// Vector-valued priors contribute columns `name[0]`, `name[1]`, ...
    pub fn new(cg: &CompiledGraph, selected: &[String]) -> Result<Self, InferenceError> {
        let chosen = if selected.is_empty() {
            cg.prior_names()
        } else {
            selected.to_vec()
        };
        let mut seen = BTreeSet::new();
        let mut nodes = Vec::new();
        let mut names = Vec::new();
        for name in chosen {
            match cg.spec().node(&name) {
                Some(n) if n.kind == NodeKind::Prior => {}
                _ => {
                    return Err(InferenceError::InvalidConfig(format!(
                        "parameter '{name}' is not a prior node"
                    )))
                }
            }
            if !seen.insert(name.clone()) {
                return Err(InferenceError::InvalidConfig(format!(
                    "parameter '{name}' listed twice"
                )));
            }
            let len = cg.output_len(&name).expect("compiled nodes have shapes");
            if len == 1 {
                names.push(name.clone());
            } else {
                names.extend((0..len).map(|i| format!("{name}[{i}]")));
            }
            nodes.push((name, len));
        }
        if nodes.is_empty() {
            return Err(InferenceError::NotInferable(vec![Violation::NoPrior]));
        }
        Ok(Self { nodes, names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn nodes(&self) -> &[(String, usize)] {
        &self.nodes
    }

    pub fn node_names(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|(n, _)| n.as_str())
    }

    /// Parameter vector of element `e` in a computed batch.
    pub fn extract(&self, batch: &Batch, e: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        for (name, _) in &self.nodes {
            v.extend_from_slice(batch.get(name).expect("parameter node computed").element(e));
        }
        v
    }

    /// Splits parameter vectors back into per-node values, ready to pass to
    /// the executor as precomputed inputs.
    pub fn to_batch(&self, thetas: &[Vec<f64>], batch_index: u64) -> Batch {
        let mut b = Batch::empty(batch_index, thetas.len());
        let mut offset = 0;
        for (name, len) in &self.nodes {
            let data: Vec<f64> = thetas
                .iter()
                .flat_map(|t| t[offset..offset + len].iter().copied())
                .collect();
            b.insert(
                name.clone(),
                NodeValues::new(vec![*len], thetas.len(), data).expect("consistent lengths"),
            );
            offset += len;
        }
        b
    }
}

enum PriorStep {
    Constant(Vec<f64>),
    Prior { family: String, offset: usize },
    Operation(usize),
}

/// Joint prior density of a parameter vector, following the graph: prior
/// parameters may come from constants, other priors, or deterministic
/// operations on them.
pub struct PriorModel<'g> {
    cg: &'g CompiledGraph,
    layout: ParameterLayout,
    steps: Vec<(usize, PriorStep)>,
}

impl fmt::Debug for PriorModel<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PriorModel")
            .field("layout", &self.layout)
            .finish_non_exhaustive()
    }
}

impl<'g> PriorModel<'g> {
    /// Every prior that feeds the distance must be part of `layout`.
    pub fn new(cg: &'g CompiledGraph, layout: &ParameterLayout) -> Result<Self, InferenceError> {
        let distance = check_inferable(cg)?;
        let spec = cg.spec();
        let upstream = spec.ancestors(distance);
        let in_layout: BTreeSet<&str> = layout.node_names().collect();
        if let Some(missing) = upstream
            .iter()
            .find(|n| spec.node(n).is_some_and(|s| s.kind == NodeKind::Prior) && !in_layout.contains(n.as_str()))
        {
            return Err(InferenceError::InvalidConfig(format!(
                "prior '{missing}' feeds the distance and must be a parameter for this method"
            )));
        }
        let mut needed: BTreeSet<String> = BTreeSet::new();
        for name in layout.node_names() {
            needed.insert(name.to_string());
            needed.extend(spec.ancestors(name));
        }
        let mut offsets = std::collections::BTreeMap::new();
        let mut off = 0;
        for (name, len) in layout.nodes() {
            offsets.insert(name.as_str(), off);
            off += len;
        }
        let mut steps = Vec::new();
        for &i in cg.topo_indices() {
            let node = &spec.nodes()[i];
            if !needed.contains(&node.name) {
                continue;
            }
            let step = match node.kind {
                NodeKind::Constant => PriorStep::Constant(node.args.clone()),
                NodeKind::Prior => match offsets.get(node.name.as_str()) {
                    Some(&offset) => PriorStep::Prior {
                        family: node.op.builtin_name().unwrap_or_default().to_string(),
                        offset,
                    },
                    None => {
                        return Err(InferenceError::InvalidConfig(format!(
                            "prior '{}' parameterizes another prior and must be a parameter",
                            node.name
                        )))
                    }
                },
                NodeKind::Operation => PriorStep::Operation(i),
                other => {
                    return Err(InferenceError::InvalidConfig(format!(
                        "prior parameters may not depend on {other} node '{}'",
                        node.name
                    )))
                }
            };
            steps.push((i, step));
        }
        Ok(Self {
            cg,
            layout: layout.clone(),
            steps,
        })
    }

    pub fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    /// `log p(θ)`; `-∞` outside the support or where a hierarchical
    /// parent yields invalid distribution parameters.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        assert_eq!(theta.len(), self.layout.dim(), "parameter vector length");
        let spec = self.cg.spec();
        let mut values: std::collections::HashMap<usize, Vec<f64>> = std::collections::HashMap::new();
        let mut total = 0.0;
        for (i, step) in &self.steps {
            let node = &spec.nodes()[*i];
            let parents: Vec<&[f64]> = node
                .parents
                .iter()
                .map(|p| values[&spec.index_of(p).expect("known parent")].as_slice())
                .collect();
            let value = match step {
                PriorStep::Constant(v) => v.clone(),
                PriorStep::Prior { family, offset } => {
                    let len = self.cg.output_len(&node.name).expect("shape");
                    let x = theta[*offset..offset + len].to_vec();
                    let params: Vec<f64> = parents.concat().into_iter().chain(node.args.iter().copied()).collect();
                    match DistSpec::from_params(family, &params).and_then(|d| d.log_density(&x)) {
                        Ok(lp) => total += lp,
                        Err(_) => return f64::NEG_INFINITY,
                    }
                    x
                }
                PriorStep::Operation(idx) => {
                    let op = self.cg.op(*idx).expect("operation has an op");
                    let mut rng = RngStream::new(0, 0, &node.name);
                    match op.eval(&parents, &node.args, &mut rng) {
                        Ok(v) => v,
                        Err(_) => return f64::NEG_INFINITY,
                    }
                }
            };
            if total == f64::NEG_INFINITY {
                return total;
            }
            values.insert(*i, value);
        }
        total
    }
}

/// Stable ascending sort of accepted draws by distance.
pub(crate) fn sort_by_distance(
    samples: Vec<Vec<f64>>,
    distances: Vec<f64>,
    weights: Vec<f64>,
) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]));
    (
        order.iter().map(|&i| samples[i].clone()).collect(),
        order.iter().map(|&i| distances[i]).collect(),
        order.iter().map(|&i| weights[i]).collect(),
    )
}
