//! Merkle-style node digests.
//!
//! Canonical encoding: every field is a 64-bit little-endian length followed
//! by its bytes; strings are UTF-8 and numbers IEEE-754 little-endian
//! doubles. A node's digest covers its kind, op, args, vectorized flag and
//! the digests of its parents in order. Names never enter the hash.
//! Distance nodes also absorb the raw observed array, since their outputs
//! depend on it.

use super::{GraphError, GraphSpec, NodeKind, NodeSpec, OpRef};
use sha2::{Digest as _, Sha256};
use std::collections::HashMap;
use std::fmt;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let v = hex::decode(s).ok()?;
        Some(Digest(v.try_into().ok()?))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

struct Encoder(Vec<u8>);

impl Encoder {
    fn field(&mut self, bytes: &[u8]) {
        self.0.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
        self.0.extend_from_slice(bytes);
    }

    fn floats(&mut self, xs: &[f64]) {
        let bytes: Vec<u8> = xs.iter().flat_map(|x| x.to_le_bytes()).collect();
        self.field(&bytes);
    }
}

fn encode_op(op: &OpRef) -> Vec<u8> {
    let mut e = Encoder(Vec::new());
    match op {
        OpRef::Builtin(name) => {
            e.field(b"builtin");
            e.field(name.as_bytes());
        }
        OpRef::External(cmd) => {
            e.field(b"external");
            e.field(&(cmd.argv.len() as u64).to_le_bytes());
            for a in &cmd.argv {
                e.field(a.as_bytes());
            }
            let wd = cmd
                .working_dir
                .as_ref()
                .map(|p| p.to_string_lossy().into_owned())
                .unwrap_or_default();
            e.field(wd.as_bytes());
        }
    }
    e.0
}

pub(crate) fn node_digest(node: &NodeSpec, parent_digests: &[Digest], observed: Option<&[f64]>) -> Digest {
    let mut e = Encoder(Vec::new());
    e.field(node.kind.as_str().as_bytes());
    e.field(&encode_op(&node.op));
    e.floats(&node.args);
    e.field(&[u8::from(node.vectorized)]);
    let parents: Vec<u8> = parent_digests.iter().flat_map(|d| d.0).collect();
    e.field(&parents);
    if node.kind == NodeKind::Distance {
        e.floats(observed.unwrap_or(&[]));
    }
    Digest(Sha256::digest(&e.0).into())
}

fn observed_for_distance(graph: &GraphSpec) -> Option<&[f64]> {
    graph.observed().values().next().map(Vec::as_slice)
}

pub(crate) fn subgraph_digest(graph: &GraphSpec, name: &str) -> Result<Digest, GraphError> {
    let mut memo = HashMap::new();
    let mut path = Vec::new();
    digest_rec(graph, name, &mut memo, &mut path)
}

fn digest_rec(
    graph: &GraphSpec,
    name: &str,
    memo: &mut HashMap<String, Digest>,
    path: &mut Vec<String>,
) -> Result<Digest, GraphError> {
    if let Some(d) = memo.get(name) {
        return Ok(*d);
    }
    if let Some(pos) = path.iter().position(|p| p == name) {
        return Err(GraphError::CycleDetected(path[pos..].to_vec()));
    }
    let node = graph
        .node(name)
        .ok_or_else(|| GraphError::UnknownNode(name.to_string()))?;
    path.push(name.to_string());
    let mut parents = Vec::with_capacity(node.parents.len());
    for p in &node.parents {
        parents.push(digest_rec(graph, p, memo, path)?);
    }
    path.pop();
    let d = node_digest(node, &parents, observed_for_distance(graph));
    memo.insert(name.to_string(), d);
    Ok(d)
}

/// Digests of all nodes, in a single pass over a topological order.
pub(crate) fn all_digests(graph: &GraphSpec, topo: &[usize]) -> Vec<Digest> {
    let mut out: Vec<Option<Digest>> = vec![None; graph.len()];
    let observed = observed_for_distance(graph);
    for &i in topo {
        let node = &graph.nodes()[i];
        let parents: Vec<Digest> = node
            .parents
            .iter()
            .map(|p| out[graph.index_of(p).expect("validated parent")].expect("parent precedes child"))
            .collect();
        out[i] = Some(node_digest(node, &parents, observed));
    }
    out.into_iter().map(|d| d.expect("all nodes visited")).collect()
}
