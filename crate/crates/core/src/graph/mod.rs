//! Declarative inference graphs.
//!
//! A [`GraphSpec`] is an ordered list of [`NodeSpec`]s plus observed data for
//! at most one simulator. Editing operations return new graphs; the original
//! is never modified. [`GraphSpec::compile`] turns a graph into a
//! [`CompiledGraph`] ready for batch evaluation.

mod compile;
mod digest;

pub use compile::{CompiledGraph, PROBE_BATCH_INDEX, PROBE_ROOT_SEED};
pub use digest::Digest;

use crate::external::ExternalCommand;
use crate::ops::OpRegistry;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Constant,
    Prior,
    Simulator,
    Summary,
    Distance,
    Operation,
}

impl NodeKind {
    pub const ALL: [NodeKind; 6] = [
        NodeKind::Constant,
        NodeKind::Prior,
        NodeKind::Simulator,
        NodeKind::Summary,
        NodeKind::Distance,
        NodeKind::Operation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Constant => "constant",
            NodeKind::Prior => "prior",
            NodeKind::Simulator => "simulator",
            NodeKind::Summary => "summary",
            NodeKind::Distance => "distance",
            NodeKind::Operation => "operation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What a node computes: a registered operation (or prior family) by name,
/// or an external program.
#[derive(Debug, Clone, PartialEq)]
pub enum OpRef {
    Builtin(String),
    External(ExternalCommand),
}

impl OpRef {
    pub fn builtin(name: impl Into<String>) -> Self {
        OpRef::Builtin(name.into())
    }

    pub fn builtin_name(&self) -> Option<&str> {
        match self {
            OpRef::Builtin(s) => Some(s),
            OpRef::External(_) => None,
        }
    }
}

impl fmt::Display for OpRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpRef::Builtin(s) => f.write_str(s),
            OpRef::External(c) => write!(f, "external({})", c.argv.join(" ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub name: String,
    pub kind: NodeKind,
    pub parents: Vec<String>,
    pub op: OpRef,
    /// Static arguments passed after the parent outputs.
    pub args: Vec<f64>,
    /// Evaluate the op once per batch instead of once per element.
    pub vectorized: bool,
}

impl NodeSpec {
    pub fn new(name: impl Into<String>, kind: NodeKind, op: OpRef) -> Self {
        Self {
            name: name.into(),
            kind,
            parents: Vec::new(),
            op,
            args: Vec::new(),
            vectorized: false,
        }
    }

    pub fn constant(name: impl Into<String>, value: Vec<f64>) -> Self {
        Self::new(name, NodeKind::Constant, OpRef::builtin("constant")).args(value)
    }

    /// Prior of the given family (`uniform`, `normal`, `mvn`). Distribution
    /// parameters are parent outputs followed by `args`.
    pub fn prior(name: impl Into<String>, family: &str) -> Self {
        Self::new(name, NodeKind::Prior, OpRef::builtin(family))
    }

    pub fn simulator(name: impl Into<String>, op: OpRef) -> Self {
        Self::new(name, NodeKind::Simulator, op)
    }

    pub fn summary(name: impl Into<String>, op: &str) -> Self {
        Self::new(name, NodeKind::Summary, OpRef::builtin(op))
    }

    pub fn distance(name: impl Into<String>, op: &str) -> Self {
        Self::new(name, NodeKind::Distance, OpRef::builtin(op))
    }

    pub fn operation(name: impl Into<String>, op: &str) -> Self {
        Self::new(name, NodeKind::Operation, OpRef::builtin(op))
    }

    pub fn parents<S: Into<String>>(mut self, parents: impl IntoIterator<Item = S>) -> Self {
        self.parents = parents.into_iter().map(Into::into).collect();
        self
    }

    pub fn args(mut self, args: Vec<f64>) -> Self {
        self.args = args;
        self
    }

    pub fn vectorized(mut self, on: bool) -> Self {
        self.vectorized = on;
        self
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

pub fn is_valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// A reason a graph cannot be compiled or used for inference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    InvalidName { node: String },
    DuplicateName { node: String },
    UnknownParent { node: String, parent: String },
    CycleDetected { nodes: Vec<String> },
    KindConstraint { node: String, reason: String },
    ObservedUnknownNode { node: String },
    ObservedNotSimulator { node: String },
    MultipleObserved { nodes: Vec<String> },
    ObservedMissing,
    NotDownstreamOfObserved { distance: String, parent: String },
    NoPrior,
    DistanceCount { count: usize },
}

impl Violation {
    /// Violations that only matter for inference (a graph with these can
    /// still be compiled and evaluated).
    pub fn inference_only(&self) -> bool {
        matches!(self, Violation::NoPrior | Violation::DistanceCount { .. })
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InvalidName { node } => write!(f, "invalid node name '{node}'"),
            Violation::DuplicateName { node } => write!(f, "duplicate node name '{node}'"),
            Violation::UnknownParent { node, parent } => {
                write!(f, "node '{node}' references unknown parent '{parent}'")
            }
            Violation::CycleDetected { nodes } => write!(f, "cycle through nodes {}", nodes.join(", ")),
            Violation::KindConstraint { node, reason } => write!(f, "node '{node}': {reason}"),
            Violation::ObservedUnknownNode { node } => write!(f, "observed data given for unknown node '{node}'"),
            Violation::ObservedNotSimulator { node } => {
                write!(f, "observed data given for '{node}', which is not a simulator")
            }
            Violation::MultipleObserved { nodes } => {
                write!(f, "only one simulator may be observed, got {}", nodes.join(", "))
            }
            Violation::ObservedMissing => write!(f, "graph has a distance node but no observed data"),
            Violation::NotDownstreamOfObserved { distance, parent } => write!(
                f,
                "distance '{distance}' reads summary '{parent}', which does not depend on the observed simulator"
            ),
            Violation::NoPrior => write!(f, "graph has no prior node"),
            Violation::DistanceCount { count } => write!(f, "expected exactly one distance node, found {count}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("duplicate node name '{0}'")]
    DuplicateName(String),
    #[error("node '{node}' references unknown parent '{parent}'")]
    UnknownParent { node: String, parent: String },
    #[error("unknown node '{0}'")]
    UnknownNode(String),
    #[error("invalid node name '{0}'")]
    InvalidName(String),
    #[error("cycle detected through {}", .0.join(", "))]
    CycleDetected(Vec<String>),
    #[error("graph is invalid: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("observed data missing for '{0}'")]
    ObservedMissing(String),
    #[error("shape inference failed at '{node}': {reason}")]
    ShapeInferenceFailed { node: String, reason: String },
    #[error("node '{node}' uses unknown operation '{op}'")]
    UnknownOp { node: String, op: String },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraphSpec {
    nodes: Vec<NodeSpec>,
    observed: BTreeMap<String, Vec<f64>>,
}

impl GraphSpec {
    pub fn new() -> Self {
        Self::default()
    }

    /// Assembles a graph without any checks; see [`GraphSpec::validate`].
    pub fn from_parts(nodes: Vec<NodeSpec>, observed: BTreeMap<String, Vec<f64>>) -> Self {
        Self { nodes, observed }
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn observed(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.observed
    }

    pub fn node(&self, name: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn add_node(&self, spec: NodeSpec) -> Result<GraphSpec, GraphError> {
        if !is_valid_name(&spec.name) {
            return Err(GraphError::InvalidName(spec.name));
        }
        if self.node(&spec.name).is_some() {
            return Err(GraphError::DuplicateName(spec.name));
        }
        if let Some(p) = spec.parents.iter().find(|p| self.node(p).is_none()) {
            return Err(GraphError::UnknownParent {
                node: spec.name.clone(),
                parent: p.clone(),
            });
        }
        let mut g = self.clone();
        g.nodes.push(spec);
        Ok(g)
    }

    /// Consuming form of [`GraphSpec::add_node`] for builder chains.
    pub fn with_node(self, spec: NodeSpec) -> Result<GraphSpec, GraphError> {
        self.add_node(spec)
    }

    /// Attaches observed data to a simulator node.
    pub fn with_observed(mut self, node: &str, data: Vec<f64>) -> Result<GraphSpec, GraphError> {
        if self.node(node).is_none() {
            return Err(GraphError::UnknownNode(node.to_string()));
        }
        self.observed.insert(node.to_string(), data);
        Ok(self)
    }

    /// Replaces the node called `name`; children keep referring to `name`.
    pub fn replace_node(&self, name: &str, spec: NodeSpec) -> Result<GraphSpec, GraphError> {
        let idx = self
            .index_of(name)
            .ok_or_else(|| GraphError::UnknownNode(name.to_string()))?;
        if let Some(p) = spec.parents.iter().find(|p| self.node(p).is_none()) {
            return Err(GraphError::UnknownParent {
                node: name.to_string(),
                parent: p.clone(),
            });
        }
        let mut g = self.clone();
        let mut spec = spec;
        spec.name = name.to_string();
        g.nodes[idx] = spec;
        g.topo_order()?;
        Ok(g)
    }

    fn children_map(&self) -> HashMap<&str, Vec<usize>> {
        let mut children: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            for p in &n.parents {
                children.entry(p.as_str()).or_default().push(i);
            }
        }
        children
    }

    /// Kahn's algorithm; among ready nodes the earliest-inserted goes first.
    pub(crate) fn topo_indices(&self) -> Result<Vec<usize>, GraphError> {
        let index: HashMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.name.as_str(), i))
            .collect();
        let mut indegree = vec![0usize; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            for p in &n.parents {
                if !index.contains_key(p.as_str()) {
                    return Err(GraphError::UnknownParent {
                        node: n.name.clone(),
                        parent: p.clone(),
                    });
                }
                indegree[i] += 1;
            }
        }
        let children = self.children_map();
        let mut ready: BTreeSet<usize> = (0..self.nodes.len()).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &c in children
                .get(self.nodes[i].name.as_str())
                .map(Vec::as_slice)
                .unwrap_or(&[])
            {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() != self.nodes.len() {
            return Err(GraphError::CycleDetected(self.cycle_members(&order)));
        }
        Ok(order)
    }

    /// Nodes left over by Kahn's algorithm that can reach themselves.
    fn cycle_members(&self, done: &[usize]) -> Vec<String> {
        let done: BTreeSet<usize> = done.iter().copied().collect();
        let children = self.children_map();
        let mut members = Vec::new();
        for start in (0..self.nodes.len()).filter(|i| !done.contains(i)) {
            let mut stack = vec![start];
            let mut seen = BTreeSet::new();
            let mut found = false;
            while let Some(i) = stack.pop() {
                for &c in children
                    .get(self.nodes[i].name.as_str())
                    .map(Vec::as_slice)
                    .unwrap_or(&[])
                {
                    if c == start {
                        found = true;
                    }
                    if seen.insert(c) {
                        stack.push(c);
                    }
                }
            }
            if found {
                members.push(self.nodes[start].name.clone());
            }
        }
        members
    }

    pub fn topo_order(&self) -> Result<Vec<String>, GraphError> {
        Ok(self
            .topo_indices()?
            .into_iter()
            .map(|i| self.nodes[i].name.clone())
            .collect())
    }

    /// Names of every ancestor of `name` (excluding itself).
    pub fn ancestors(&self, name: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<&str> = self
            .node(name)
            .map(|n| n.parents.iter().map(String::as_str).collect())
            .unwrap_or_default();
        while let Some(p) = stack.pop() {
            if out.insert(p.to_string()) {
                if let Some(n) = self.node(p) {
                    stack.extend(n.parents.iter().map(String::as_str));
                }
            }
        }
        out
    }

    /// Reports every problem found. Empty means the graph is usable for
    /// inference.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !is_valid_name(&n.name) {
                out.push(Violation::InvalidName { node: n.name.clone() });
            }
            if !seen.insert(n.name.as_str()) {
                out.push(Violation::DuplicateName { node: n.name.clone() });
            }
        }
        let mut parents_ok = true;
        for n in &self.nodes {
            for p in &n.parents {
                if self.node(p).is_none() {
                    parents_ok = false;
                    out.push(Violation::UnknownParent {
                        node: n.name.clone(),
                        parent: p.clone(),
                    });
                }
            }
        }
        let acyclic = if parents_ok {
            match self.topo_indices() {
                Err(GraphError::CycleDetected(nodes)) => {
                    out.push(Violation::CycleDetected { nodes });
                    false
                }
                _ => true,
            }
        } else {
            false
        };
        for n in &self.nodes {
            if let Some(reason) = self.kind_violation(n) {
                out.push(Violation::KindConstraint {
                    node: n.name.clone(),
                    reason,
                });
            }
        }

        let mut observed_sim = None;
        for name in self.observed.keys() {
            match self.node(name) {
                None => out.push(Violation::ObservedUnknownNode { node: name.clone() }),
                Some(n) if n.kind != NodeKind::Simulator => {
                    out.push(Violation::ObservedNotSimulator { node: name.clone() })
                }
                Some(_) => observed_sim = Some(name.clone()),
            }
        }
        if self.observed.len() > 1 {
            out.push(Violation::MultipleObserved {
                nodes: self.observed.keys().cloned().collect(),
            });
        }

        let distances: Vec<&NodeSpec> = self.nodes.iter().filter(|n| n.kind == NodeKind::Distance).collect();
        if !distances.is_empty() {
            match (&observed_sim, acyclic) {
                (None, _) if self.observed.is_empty() => out.push(Violation::ObservedMissing),
                (Some(sim), true) => {
                    for d in &distances {
                        for p in &d.parents {
                            if p != sim && !self.ancestors(p).contains(sim) {
                                out.push(Violation::NotDownstreamOfObserved {
                                    distance: d.name.clone(),
                                    parent: p.clone(),
                                });
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        if !self.nodes.iter().any(|n| n.kind == NodeKind::Prior) {
            out.push(Violation::NoPrior);
        }
        if distances.len() != 1 {
            out.push(Violation::DistanceCount { count: distances.len() });
        }
        out
    }

    fn kind_violation(&self, n: &NodeSpec) -> Option<String> {
        let parent_kinds: Vec<NodeKind> = n.parents.iter().filter_map(|p| self.node(p)).map(|p| p.kind).collect();
        if matches!(n.op, OpRef::External(_)) && n.kind != NodeKind::Simulator {
            return Some("only simulator nodes may run external commands".into());
        }
        match n.kind {
            NodeKind::Constant if !n.parents.is_empty() => Some("constant nodes take no parents".into()),
            NodeKind::Constant if n.args.is_empty() => Some("constant nodes need a value in args".into()),
            NodeKind::Distance if n.parents.is_empty() => {
                Some("distance nodes need at least one summary parent".into())
            }
            NodeKind::Distance if parent_kinds.iter().any(|k| *k != NodeKind::Summary) => {
                Some("distance parents must all be summary nodes".into())
            }
            NodeKind::Prior
                if parent_kinds
                    .iter()
                    .any(|k| !matches!(k, NodeKind::Constant | NodeKind::Prior | NodeKind::Operation)) =>
            {
                Some("prior parents must be constant, prior or operation nodes".into())
            }
            NodeKind::Summary if n.parents.is_empty() => Some("summary nodes need a parent".into()),
            _ => None,
        }
    }

    /// Merkle digest of `name` and its ancestors.
    pub fn subgraph_digest(&self, name: &str) -> Result<Digest, GraphError> {
        digest::subgraph_digest(self, name)
    }

    pub fn compile(&self) -> Result<CompiledGraph, GraphError> {
        CompiledGraph::compile(self, &OpRegistry::builtin())
    }

    pub fn compile_with(&self, registry: &OpRegistry) -> Result<CompiledGraph, GraphError> {
        CompiledGraph::compile(self, registry)
    }
}

#[cfg(test)]
pub(crate) use tests::ma2_graph;

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn ma2_graph(observed: Vec<f64>) -> GraphSpec {
        GraphSpec::new()
            .with_node(NodeSpec::prior("t1", "uniform").args(vec![0.0, 2.0]))
            .and_then(|g| g.with_node(NodeSpec::prior("t2", "uniform").args(vec![-1.0, 1.0])))
            .and_then(|g| {
                g.with_node(
                    NodeSpec::simulator("sim", OpRef::builtin("ma2"))
                        .parents(["t1", "t2"])
                        .args(vec![observed.len() as f64]),
                )
            })
            .and_then(|g| g.with_node(NodeSpec::summary("S1", "autocov").parents(["sim"]).args(vec![1.0])))
            .and_then(|g| g.with_node(NodeSpec::summary("S2", "autocov").parents(["sim"]).args(vec![2.0])))
            .and_then(|g| g.with_node(NodeSpec::distance("d", "euclidean").parents(["S1", "S2"])))
            .and_then(|g| g.with_observed("sim", observed))
            .unwrap()
    }

    #[test]
    fn add_node_contracts() {
        let g = GraphSpec::new();
        let g1 = g.add_node(NodeSpec::constant("c", vec![1.0])).unwrap();
        assert_eq!(g.len(), 0);
        assert_eq!(g1.len(), 1);
        let g2 = g1.add_node(NodeSpec::operation("p", "add").parents(["c"])).unwrap();
        assert_eq!(g2.topo_order().unwrap(), ["c", "p"]);
        assert!(
            matches!(g1.add_node(NodeSpec::constant("c", vec![2.0])), Err(GraphError::DuplicateName(n)) if n == "c")
        );
        assert!(matches!(
            g1.add_node(NodeSpec::operation("q", "add").parents(["zz"])),
            Err(GraphError::UnknownParent { parent, .. }) if parent == "zz"
        ));
        assert!(matches!(
            g.add_node(NodeSpec::constant("1x", vec![1.0])),
            Err(GraphError::InvalidName(_))
        ));
    }

    #[test]
    fn cycle_reported() {
        let g = GraphSpec::from_parts(
            vec![
                NodeSpec::operation("a", "add").parents(["b"]),
                NodeSpec::operation("b", "add").parents(["a"]),
            ],
            BTreeMap::new(),
        );
        let v = g.validate();
        assert!(v.contains(&Violation::CycleDetected {
            nodes: vec!["a".into(), "b".into()]
        }));
        assert!(matches!(g.topo_order(), Err(GraphError::CycleDetected(_))));
    }

    #[test]
    fn distance_on_simulator_is_kind_violation() {
        let g = GraphSpec::from_parts(
            vec![
                NodeSpec::prior("t", "uniform").args(vec![0.0, 1.0]),
                NodeSpec::simulator("sim", OpRef::builtin("gaussian"))
                    .parents(["t"])
                    .args(vec![1.0, 5.0]),
                NodeSpec::distance("d", "euclidean").parents(["sim"]),
            ],
            BTreeMap::from([("sim".to_string(), vec![0.0; 5])]),
        );
        assert!(g
            .validate()
            .iter()
            .any(|v| matches!(v, Violation::KindConstraint { node, .. } if node == "d")));
    }

    #[test]
    fn ma2_graph_is_valid() {
        let g = ma2_graph(vec![0.1; 10]);
        assert_eq!(g.validate(), vec![]);
        assert_eq!(g.len(), 6);
    }

    #[test]
    fn distance_without_observed() {
        let g = ma2_graph(vec![0.0; 5]);
        let g = GraphSpec::from_parts(g.nodes.clone(), BTreeMap::new());
        assert!(g.validate().contains(&Violation::ObservedMissing));
    }

    #[test]
    fn topo_order_ties_follow_insertion() {
        let g = ma2_graph(vec![0.0; 5]);
        assert_eq!(g.topo_order().unwrap(), ["t1", "t2", "sim", "S1", "S2", "d"]);
        let single = GraphSpec::new().with_node(NodeSpec::constant("x", vec![1.0])).unwrap();
        assert_eq!(single.topo_order().unwrap(), ["x"]);
        // Insertion order decides between independent roots even when a later
        // node is declared first in the parent list.
        let g = GraphSpec::from_parts(
            vec![
                NodeSpec::operation("late", "add").parents(["b", "a"]),
                NodeSpec::constant("b", vec![1.0]),
                NodeSpec::constant("a", vec![1.0]),
            ],
            BTreeMap::new(),
        );
        assert_eq!(g.topo_order().unwrap(), ["b", "a", "late"]);
    }

    #[test]
    fn replace_node_cycle_and_unknown() {
        let g = ma2_graph(vec![0.0; 5]);
        assert!(matches!(
            g.replace_node("t1", NodeSpec::prior("t1", "uniform").parents(["S1"])),
            Err(GraphError::CycleDetected(_))
        ));
        assert!(matches!(
            g.replace_node("nope", NodeSpec::constant("nope", vec![1.0])),
            Err(GraphError::UnknownNode(_))
        ));
    }
}
