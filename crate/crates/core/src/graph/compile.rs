use super::digest::{self, Digest};
use super::{GraphError, GraphSpec, NodeKind, OpRef, Violation};
use crate::distributions::DistSpec;
use crate::executor::{evaluate, Batch, ExecError};
use crate::external::ExternalOp;
use crate::ops::{NodeOp, OpContext, OpRegistry};
use crate::rng::RngStream;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

/// Batch index reserved for shape probing. Never used by inference runs.
pub const PROBE_BATCH_INDEX: u64 = (1 << 63) - 1;
/// Root seed used for the shape probe and for evaluating the observed branch.
pub const PROBE_ROOT_SEED: u64 = 0;

const PRIOR_FAMILIES: [&str; 4] = ["uniform", "normal", "mvn", "multivariate_normal"];

/// An immutable, evaluation-ready graph.
#[derive(Clone)]
pub struct CompiledGraph {
    spec: GraphSpec,
    topo: Vec<usize>,
    topo_order: Vec<String>,
    observed_values: BTreeMap<String, Vec<f64>>,
    references: BTreeMap<String, Vec<f64>>,
    digests: BTreeMap<String, Digest>,
    output_shape: BTreeMap<String, Vec<usize>>,
    ops: Vec<Option<Arc<dyn NodeOp>>>,
}

impl fmt::Debug for CompiledGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CompiledGraph")
            .field("topo_order", &self.topo_order)
            .field("observed_values", &self.observed_values)
            .field("output_shape", &self.output_shape)
            .finish_non_exhaustive()
    }
}

impl PartialEq for CompiledGraph {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.topo_order == other.topo_order
            && self.observed_values == other.observed_values
            && self.references == other.references
            && self.digests == other.digests
            && self.output_shape == other.output_shape
    }
}

impl CompiledGraph {
    pub(crate) fn compile(spec: &GraphSpec, registry: &OpRegistry) -> Result<Self, GraphError> {
        let blocking: Vec<Violation> = spec.validate().into_iter().filter(|v| !v.inference_only()).collect();
        if blocking.contains(&Violation::ObservedMissing) && blocking.len() == 1 {
            let d = spec
                .nodes()
                .iter()
                .find(|n| n.kind == NodeKind::Distance)
                .map(|n| n.name.clone());
            return Err(GraphError::ObservedMissing(d.unwrap_or_default()));
        }
        if !blocking.is_empty() {
            return Err(GraphError::Invalid(blocking));
        }
        let topo = spec.topo_indices()?;
        let digest_vec = digest::all_digests(spec, &topo);

        let mut ops = Vec::with_capacity(spec.len());
        for node in spec.nodes() {
            let op: Option<Arc<dyn NodeOp>> = match (&node.kind, &node.op) {
                (NodeKind::Constant, _) => None,
                (NodeKind::Prior, OpRef::Builtin(family)) if PRIOR_FAMILIES.contains(&family.as_str()) => None,
                (_, OpRef::External(cmd)) => Some(Arc::new(ExternalOp::new(cmd.clone()))),
                (NodeKind::Prior, op) | (_, op @ OpRef::Builtin(_)) => {
                    let name = op.builtin_name().unwrap_or_default();
                    match registry.get(name) {
                        Some(op) if node.kind != NodeKind::Prior => Some(op),
                        _ => {
                            return Err(GraphError::UnknownOp {
                                node: node.name.clone(),
                                op: op.to_string(),
                            })
                        }
                    }
                }
            };
            ops.push(op);
        }

        let mut cg = CompiledGraph {
            spec: spec.clone(),
            topo_order: topo.iter().map(|&i| spec.nodes()[i].name.clone()).collect(),
            topo,
            observed_values: BTreeMap::new(),
            references: BTreeMap::new(),
            digests: spec.nodes().iter().map(|n| n.name.clone()).zip(digest_vec).collect(),
            output_shape: BTreeMap::new(),
            ops,
        };
        cg.evaluate_observed_branch()?;
        cg.infer_shapes()?;
        Ok(cg)
    }

    fn evaluate_observed_branch(&mut self) -> Result<(), GraphError> {
        let Some((sim, data)) = self.spec.observed().iter().next() else {
            return Ok(());
        };
        let sim = sim.clone();
        self.observed_values.insert(sim.clone(), data.clone());
        for &i in &self.topo {
            let node = &self.spec.nodes()[i];
            if !matches!(node.kind, NodeKind::Summary | NodeKind::Operation) {
                continue;
            }
            if !self.spec.ancestors(&node.name).contains(&sim) {
                continue;
            }
            let mut inputs: Vec<&[f64]> = Vec::with_capacity(node.parents.len());
            let mut complete = true;
            for p in &node.parents {
                let pn = self.spec.node(p).expect("validated parent");
                match (self.observed_values.get(p), pn.kind) {
                    (Some(v), _) => inputs.push(v),
                    (None, NodeKind::Constant) => inputs.push(&pn.args),
                    _ => complete = false,
                }
            }
            if !complete {
                continue;
            }
            let op = self.ops[i].as_ref().expect("summary/operation nodes have ops");
            let mut rng = RngStream::new(PROBE_ROOT_SEED, PROBE_BATCH_INDEX, &node.name);
            let value = if node.vectorized || op.batch_only() {
                let ctx = OpContext {
                    node: &node.name,
                    parents: &node.parents,
                    root_seed: PROBE_ROOT_SEED,
                    batch_index: PROBE_BATCH_INDEX,
                    batch_size: 1,
                };
                op.eval_batch(&ctx, &[inputs], &node.args, &mut rng)
                    .map_err(|e| e.message)
                    .and_then(|mut rows| rows.pop().ok_or_else(|| "op returned no rows".to_string()))
            } else {
                op.eval(&inputs, &node.args, &mut rng)
            };
            let value = value.map_err(|reason| GraphError::ShapeInferenceFailed {
                node: node.name.clone(),
                reason: format!("observed branch: {reason}"),
            })?;
            self.observed_values.insert(node.name.clone(), value);
        }
        for node in self.spec.nodes().iter().filter(|n| n.kind == NodeKind::Distance) {
            let mut reference = Vec::new();
            for p in &node.parents {
                let v = self
                    .observed_values
                    .get(p)
                    .ok_or_else(|| GraphError::ObservedMissing(p.clone()))?;
                reference.extend_from_slice(v);
            }
            self.references.insert(node.name.clone(), reference);
        }
        Ok(())
    }

    fn infer_shapes(&mut self) -> Result<(), GraphError> {
        let probe = evaluate(
            self,
            PROBE_BATCH_INDEX,
            PROBE_ROOT_SEED,
            1,
            Batch::empty(PROBE_BATCH_INDEX, 1),
            false,
        )
        .map_err(|e| match e {
            ExecError::OpFailure { node, message, .. } => GraphError::ShapeInferenceFailed { node, reason: message },
            ExecError::ShapeMismatch {
                node, expected, got, ..
            } => GraphError::ShapeInferenceFailed {
                node,
                reason: format!("expected {expected} values, got {got}"),
            },
            other => GraphError::ShapeInferenceFailed {
                node: String::new(),
                reason: other.to_string(),
            },
        })?;
        for (name, values) in probe.values() {
            self.output_shape.insert(name.clone(), values.element_shape().to_vec());
        }
        for (name, obs) in &self.observed_values {
            let expected = self.output_shape[name].iter().product::<usize>();
            if obs.len() != expected {
                return Err(GraphError::ShapeInferenceFailed {
                    node: name.clone(),
                    reason: format!(
                        "observed value has {} entries but the node produces {expected}",
                        obs.len()
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    pub fn topo_order(&self) -> &[String] {
        &self.topo_order
    }

    pub(crate) fn topo_indices(&self) -> &[usize] {
        &self.topo
    }

    pub(crate) fn op(&self, index: usize) -> Option<&Arc<dyn NodeOp>> {
        self.ops[index].as_ref()
    }

    pub fn observed_values(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.observed_values
    }

    /// Concatenated observed summaries a distance node compares against.
    pub fn reference(&self, distance: &str) -> Option<&[f64]> {
        self.references.get(distance).map(Vec::as_slice)
    }

    pub fn digests(&self) -> &BTreeMap<String, Digest> {
        &self.digests
    }

    pub fn digest(&self, name: &str) -> Option<Digest> {
        self.digests.get(name).copied()
    }

    pub fn output_shapes(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.output_shape
    }

    pub fn output_shape(&self, name: &str) -> Option<&[usize]> {
        self.output_shape.get(name).map(Vec::as_slice)
    }

    /// Values per element of `name` (product of its shape).
    pub fn output_len(&self, name: &str) -> Option<usize> {
        self.output_shape(name).map(|s| s.iter().product())
    }

    pub fn prior_names(&self) -> Vec<String> {
        self.spec
            .nodes()
            .iter()
            .filter(|n| n.kind == NodeKind::Prior)
            .map(|n| n.name.clone())
            .collect()
    }

    pub fn distance_node(&self) -> Option<&str> {
        self.spec
            .nodes()
            .iter()
            .find(|n| n.kind == NodeKind::Distance)
            .map(|n| n.name.as_str())
    }

    pub fn observed_simulator(&self) -> Option<&str> {
        self.spec.observed().keys().next().map(String::as_str)
    }

    /// Every violation, including the inference-only ones compile tolerates.
    pub fn inference_violations(&self) -> Vec<Violation> {
        self.spec.validate()
    }

    /// A prior spec whose parameters are all static (args and constant parents).
    pub fn static_prior(&self, name: &str) -> Option<DistSpec> {
        let node = self.spec.node(name)?;
        if node.kind != NodeKind::Prior {
            return None;
        }
        let mut params = Vec::new();
        for p in &node.parents {
            let pn = self.spec.node(p)?;
            if pn.kind != NodeKind::Constant {
                return None;
            }
            params.extend_from_slice(&pn.args);
        }
        params.extend_from_slice(&node.args);
        DistSpec::from_params(node.op.builtin_name()?, &params).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::components::summary_autocov;
    use crate::graph::{ma2_graph, NodeSpec};

    #[test]
    fn observed_mean() {
        let g = GraphSpec::new()
            .with_node(NodeSpec::prior("mu", "normal").args(vec![0.0, 1.0]))
            .and_then(|g| {
                g.with_node(
                    NodeSpec::simulator("sim", OpRef::builtin("gaussian"))
                        .parents(["mu"])
                        .args(vec![1.0, 3.0]),
                )
            })
            .and_then(|g| g.with_node(NodeSpec::summary("m", "mean").parents(["sim"])))
            .and_then(|g| g.with_node(NodeSpec::distance("d", "euclidean").parents(["m"])))
            .and_then(|g| g.with_observed("sim", vec![1.0, 2.0, 3.0]))
            .unwrap();
        let cg = g.compile().unwrap();
        assert_eq!(cg.observed_values()["m"], vec![2.0]);
        assert_eq!(cg.reference("d").unwrap(), &[2.0]);
        assert_eq!(cg.output_shape("sim").unwrap(), &[3]);
        assert_eq!(cg.output_shape("d").unwrap(), &[1]);
    }

    #[test]
    fn observed_zero_series_autocov() {
        let cg = ma2_graph(vec![0.0; 10]).compile().unwrap();
        assert_eq!(cg.observed_values()["S1"], vec![0.0]);
    }

    #[test]
    fn ma2_observed_summaries_match_hand_formula() {
        let obs: Vec<f64> = (0..25).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let cg = ma2_graph(obs.clone()).compile().unwrap();
        // Hand oracle: direct double loop over the series.
        for (name, k) in [("S1", 1usize), ("S2", 2)] {
            let mut s = 0.0;
            for t in k..obs.len() {
                s += obs[t] * obs[t - k];
            }
            let expected = s / obs.len() as f64;
            assert!((cg.observed_values()[name][0] - expected).abs() < 1e-15);
            assert_eq!(cg.observed_values()[name][0], summary_autocov(&obs, k).unwrap());
        }
    }

    #[test]
    fn compile_is_idempotent() {
        let g = ma2_graph(vec![0.3; 12]);
        assert_eq!(g.compile().unwrap(), g.compile().unwrap());
    }

    #[test]
    fn missing_observed_is_error() {
        let g = ma2_graph(vec![0.0; 5]);
        let g = GraphSpec::from_parts(g.nodes().to_vec(), BTreeMap::new());
        assert!(matches!(g.compile(), Err(GraphError::ObservedMissing(_))));
    }

    #[test]
    fn observed_length_mismatch_is_shape_failure() {
        let g = ma2_graph(vec![0.0; 5]);
        let g = g
            .replace_node(
                "sim",
                NodeSpec::simulator("sim", OpRef::builtin("ma2"))
                    .parents(["t1", "t2"])
                    .args(vec![7.0]),
            )
            .unwrap();
        assert!(matches!(g.compile(), Err(GraphError::ShapeInferenceFailed { node, .. }) if node == "sim"));
    }

    #[test]
    fn unknown_op_rejected() {
        let g = GraphSpec::new().with_node(NodeSpec::prior("p", "cauchy")).unwrap();
        assert!(matches!(g.compile(), Err(GraphError::UnknownOp { .. })));
        let g = GraphSpec::new()
            .with_node(NodeSpec::constant("c", vec![1.0]))
            .and_then(|g| g.with_node(NodeSpec::operation("o", "frobnicate").parents(["c"])))
            .unwrap();
        assert!(matches!(g.compile(), Err(GraphError::UnknownOp { .. })));
    }
}
