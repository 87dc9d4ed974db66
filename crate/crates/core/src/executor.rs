//! Batch evaluation of compiled graphs.
//!
//! A batch is `batch_size` consecutive evaluations of every node, run in
//! topological order. Each node draws from its own stream keyed by
//! `(root_seed, batch_index, node_name)`, so a batch's contents depend only
//! on its index: never on how many workers computed it or in what order.

use crate::distributions::DistSpec;
use crate::graph::{CompiledGraph, NodeKind};
use crate::ops::OpContext;
use crate::rng::RngStream;
use crate::store::{Store, StoreError, StoreKey};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("batch {batch_index}: node '{node}'{} failed: {message}", .element.map(|e| format!(" element {e}")).unwrap_or_default())]
    OpFailure {
        batch_index: u64,
        node: String,
        element: Option<usize>,
        message: String,
    },
    #[error("batch {batch_index}: node '{node}' expected {expected} values per element, got {got}")]
    ShapeMismatch {
        batch_index: u64,
        node: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl ExecError {
    pub fn batch_index(&self) -> Option<u64> {
        match self {
            ExecError::OpFailure { batch_index, .. } | ExecError::ShapeMismatch { batch_index, .. } => {
                Some(*batch_index)
            }
            _ => None,
        }
    }
}

/// One node's outputs for a whole batch, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeValues {
    element_shape: Vec<usize>,
    batch_size: usize,
    data: Vec<f64>,
}

impl NodeValues {
    pub fn new(element_shape: Vec<usize>, batch_size: usize, data: Vec<f64>) -> Option<Self> {
        let per: usize = element_shape.iter().product();
        (data.len() == per * batch_size).then_some(Self {
            element_shape,
            batch_size,
            data,
        })
    }

    /// Builds from per-element rows, which must all have equal length.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Option<Self> {
        let len = rows.first().map(Vec::len)?;
        if rows.iter().any(|r| r.len() != len) {
            return None;
        }
        let batch_size = rows.len();
        Some(Self {
            element_shape: vec![len],
            batch_size,
            data: rows.concat(),
        })
    }

    pub fn element_shape(&self) -> &[usize] {
        &self.element_shape
    }

    pub fn element_len(&self) -> usize {
        self.element_shape.iter().product()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn element(&self, i: usize) -> &[f64] {
        let l = self.element_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    batch_index: u64,
    batch_size: usize,
    values: BTreeMap<String, NodeValues>,
}

impl Batch {
    pub fn empty(batch_index: u64, batch_size: usize) -> Self {
        Self {
            batch_index,
            batch_size,
            values: BTreeMap::new(),
        }
    }

    pub fn batch_index(&self) -> u64 {
        self.batch_index
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn values(&self) -> &BTreeMap<String, NodeValues> {
        &self.values
    }

    pub fn get(&self, node: &str) -> Option<&NodeValues> {
        self.values.get(node)
    }

    pub fn insert(&mut self, node: impl Into<String>, values: NodeValues) {
        self.values.insert(node.into(), values);
    }

    pub fn contains(&self, node: &str) -> bool {
        self.values.contains_key(node)
    }

    pub fn retain_nodes(&mut self, keep: &BTreeSet<String>) {
        self.values.retain(|k, _| keep.contains(k));
    }

    /// Bit-level equality, treating NaNs with equal payloads as equal.
    pub fn bit_eq(&self, other: &Batch) -> bool {
        self.batch_index == other.batch_index
            && self.batch_size == other.batch_size
            && self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|((ka, a), (kb, b))| {
                ka == kb
                    && a.element_shape == b.element_shape
                    && a.data.len() == b.data.len()
                    && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Evaluates one batch. With `check_shapes` off (shape probing) elements
/// only need to agree with each other.
pub(crate) fn evaluate(
    cg: &CompiledGraph,
    batch_index: u64,
    root_seed: u64,
    batch_size: usize,
    precomputed: Batch,
    check_shapes: bool,
) -> Result<Batch, ExecError> {
    if batch_size == 0 {
        return Err(ExecError::InvalidConfig("batch_size must be positive".into()));
    }
    let spec = cg.spec();
    let mut out = Batch::empty(batch_index, batch_size);
    let mut pre = precomputed.values;
    for &i in cg.topo_indices() {
        let node = &spec.nodes()[i];
        let name = node.name.as_str();
        let expected = if check_shapes { cg.output_len(name) } else { None };
        let shape_err = |expected: usize, got: usize| ExecError::ShapeMismatch {
            batch_index,
            node: name.to_string(),
            expected,
            got,
        };
        if let Some(v) = pre.remove(name) {
            if v.batch_size != batch_size {
                return Err(shape_err(batch_size, v.batch_size));
            }
            if let Some(e) = expected {
                if v.element_len() != e {
                    return Err(shape_err(e, v.element_len()));
                }
            }
            out.values.insert(name.to_string(), v);
            continue;
        }
        let fail = |element: Option<usize>, message: String| ExecError::OpFailure {
            batch_index,
            node: name.to_string(),
            element,
            message,
        };
        let parent_values: Vec<&NodeValues> = node
            .parents
            .iter()
            .map(|p| out.values.get(p).expect("parents evaluated first"))
            .collect();
        let row = |e: usize| -> Vec<&[f64]> { parent_values.iter().map(|v| v.element(e)).collect() };
        let mut rng = RngStream::new(root_seed, batch_index, name);

        let rows: Vec<Vec<f64>> = match node.kind {
            NodeKind::Constant => vec![node.args.clone(); batch_size],
            NodeKind::Prior => {
                let family = node.op.builtin_name().unwrap_or_default();
                let mut rows = Vec::with_capacity(batch_size);
                for e in 0..batch_size {
                    let params: Vec<f64> = row(e).concat().into_iter().chain(node.args.iter().copied()).collect();
                    let dist = DistSpec::from_params(family, &params).map_err(|err| fail(Some(e), err.to_string()))?;
                    rows.push(dist.sample(&mut rng, 1));
                }
                rows
            }
            _ => {
                let op = cg.op(i).expect("compiled nodes carry ops");
                let reference = if node.kind == NodeKind::Distance {
                    Some(cg.reference(name).expect("distance reference computed at compile"))
                } else {
                    None
                };
                let concat_rows: Vec<Vec<f64>>;
                let inputs: Vec<Vec<&[f64]>> = match reference {
                    Some(r) => {
                        concat_rows = (0..batch_size).map(|e| row(e).concat()).collect();
                        concat_rows.iter().map(|s| vec![s.as_slice(), r]).collect()
                    }
                    None => (0..batch_size).map(row).collect(),
                };
                if node.vectorized || op.batch_only() {
                    let ctx = OpContext {
                        node: name,
                        parents: &node.parents,
                        root_seed,
                        batch_index,
                        batch_size,
                    };
                    let rows = op
                        .eval_batch(&ctx, &inputs, &node.args, &mut rng)
                        .map_err(|e| fail(e.element, e.message))?;
                    if rows.len() != batch_size {
                        return Err(fail(
                            None,
                            format!("returned {} rows for a batch of {batch_size}", rows.len()),
                        ));
                    }
                    rows
                } else {
                    let mut rows = Vec::with_capacity(batch_size);
                    for (e, input) in inputs.iter().enumerate() {
                        rows.push(op.eval(input, &node.args, &mut rng).map_err(|m| fail(Some(e), m))?);
                    }
                    rows
                }
            }
        };
        let first = rows[0].len();
        let want = expected.unwrap_or(first);
        if let Some(bad) = rows.iter().find(|r| r.len() != want) {
            return Err(shape_err(want, bad.len()));
        }
        let values = match cg.output_shape(name) {
            Some(shape) if check_shapes => NodeValues::new(shape.to_vec(), batch_size, rows.concat()),
            _ => NodeValues::from_rows(rows),
        }
        .expect("row lengths checked");
        out.values.insert(name.to_string(), values);
    }
    Ok(out)
}

/// Evaluates one batch, skipping nodes present in `precomputed`.
pub fn run_batch(
    cg: &CompiledGraph,
    batch_index: u64,
    root_seed: u64,
    batch_size: usize,
    precomputed: Batch,
) -> Result<Batch, ExecError> {
    evaluate(cg, batch_index, root_seed, batch_size, precomputed, true)
}

/// Evaluates the given batch indices on `workers` threads. Output is ordered
/// by batch index and identical for every worker count.
pub fn parallel_run(
    cg: &CompiledGraph,
    root_seed: u64,
    batch_size: usize,
    indices: &[u64],
    workers: usize,
) -> Result<Vec<Batch>, ExecError> {
    Executor::new(cg, root_seed, batch_size)
        .workers(workers)
        .run_indices(indices)
}

/// Lazily yields batches at consecutive indices starting from `start_index`,
/// keeping only `node_names` (all nodes when empty).
pub fn generate<'g>(
    cg: &'g CompiledGraph,
    root_seed: u64,
    batch_size: usize,
    node_names: &[&str],
    start_index: u64,
) -> BatchStream<'g, 'g> {
    let exec = Executor::new(cg, root_seed, batch_size);
    BatchStream::owned(exec, start_index).keep(node_names)
}

struct StoreAttachment<'g> {
    store: &'g Store,
    nodes: Vec<String>,
}

/// Run configuration bound to a compiled graph: seed, batch size, worker
/// count and an optional output store.
pub struct Executor<'g> {
    graph: &'g CompiledGraph,
    root_seed: u64,
    batch_size: usize,
    workers: usize,
    store: Option<StoreAttachment<'g>>,
}

impl<'g> Executor<'g> {
    pub fn new(graph: &'g CompiledGraph, root_seed: u64, batch_size: usize) -> Self {
        Self {
            graph,
            root_seed,
            batch_size,
            workers: 1,
            store: None,
        }
    }

    pub fn workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    /// Persists the outputs of `nodes` and reuses any stored node outputs.
    /// Only runs without externally supplied inputs touch the store.
    pub fn with_store(mut self, store: &'g Store, nodes: Vec<String>) -> Self {
        self.store = Some(StoreAttachment { store, nodes });
        self
    }

    pub fn graph(&self) -> &'g CompiledGraph {
        self.graph
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn worker_count(&self) -> usize {
        self.workers
    }

    fn check(&self) -> Result<(), ExecError> {
        if self.workers == 0 {
            return Err(ExecError::InvalidConfig("workers must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ExecError::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Runs one batch, consulting the store when one is attached.
    pub fn run_batch(&self, batch_index: u64) -> Result<Batch, ExecError> {
        let Some(att) = &self.store else {
            return run_batch(
                self.graph,
                batch_index,
                self.root_seed,
                self.batch_size,
                Batch::empty(batch_index, self.batch_size),
            );
        };
        let loaded = att
            .store
            .plan_reuse(self.graph, self.root_seed, self.batch_size, batch_index)?;
        let loaded_names: BTreeSet<String> = loaded.values().keys().cloned().collect();
        let batch = run_batch(self.graph, batch_index, self.root_seed, self.batch_size, loaded)?;
        for node in att.nodes.iter().filter(|n| !loaded_names.contains(*n)) {
            let (Some(digest), Some(values)) = (self.graph.digest(node), batch.get(node)) else {
                continue;
            };
            let key = StoreKey {
                digest,
                root_seed: self.root_seed,
                batch_size: self.batch_size as u32,
                batch_index,
            };
            att.store.put(&key, values)?;
        }
        Ok(batch)
    }

    /// Runs one batch with caller-supplied node values; never touches the store.
    pub fn run_batch_with(&self, batch_index: u64, precomputed: Batch) -> Result<Batch, ExecError> {
        run_batch(self.graph, batch_index, self.root_seed, self.batch_size, precomputed)
    }

    pub fn run_indices(&self, indices: &[u64]) -> Result<Vec<Batch>, ExecError> {
        self.run_many(indices, |i| self.run_batch(i))
    }

    /// Like [`Executor::run_indices`], with `prepare(index)` supplying
    /// precomputed node values for each batch.
    pub fn run_indices_with<F>(&self, indices: &[u64], prepare: F) -> Result<Vec<Batch>, ExecError>
    where
        F: Fn(u64) -> Result<Batch, ExecError> + Sync,
    {
        self.run_many(indices, |i| self.run_batch_with(i, prepare(i)?))
    }

    /// Static round-robin: worker `w` takes positions `w, w + W, ...`.
    /// After a failure, batches with larger indices are skipped, so the
    /// reported error is always the lowest failing index.
    fn run_many<F>(&self, indices: &[u64], job: F) -> Result<Vec<Batch>, ExecError>
    where
        F: Fn(u64) -> Result<Batch, ExecError> + Sync,
    {
        self.check()?;
        if indices.is_empty() {
            return Ok(Vec::new());
        }
        let workers = self.workers.min(indices.len());
        let min_failed = AtomicU64::new(u64::MAX);
        let slots: Vec<Mutex<Option<Result<Batch, ExecError>>>> = indices.iter().map(|_| Mutex::new(None)).collect();
        let work = |w: usize| {
            for pos in (w..indices.len()).step_by(workers) {
                let idx = indices[pos];
                if idx > min_failed.load(Ordering::SeqCst) {
                    continue;
                }
                let r = job(idx);
                if r.is_err() {
                    min_failed.fetch_min(idx, Ordering::SeqCst);
                }
                *slots[pos].lock().expect("slot lock") = Some(r);
            }
        };
        if workers == 1 {
            work(0);
        } else {
            std::thread::scope(|s| {
                for w in 0..workers {
                    let work = &work;
                    s.spawn(move || work(w));
                }
            });
        }
        let mut results: Vec<(u64, Result<Batch, ExecError>)> = indices
            .iter()
            .zip(slots)
            .filter_map(|(&i, s)| s.into_inner().expect("slot lock").map(|r| (i, r)))
            .collect();
        results.sort_by_key(|(i, _)| *i);
        results.into_iter().map(|(_, r)| r).collect()
    }

    /// Lazy batch stream starting at `start_index`.
    pub fn generate(&self, start_index: u64) -> BatchStream<'_, 'g> {
        BatchStream {
            exec: ExecRef::Borrowed(self),
            next_index: start_index,
            end_index: None,
            buffer: VecDeque::new(),
            keep: None,
            failed: false,
        }
    }
}

enum ExecRef<'a, 'g> {
    Borrowed(&'a Executor<'g>),
    Owned(Box<Executor<'g>>),
}

impl<'g> ExecRef<'_, 'g> {
    fn get(&self) -> &Executor<'g> {
        match self {
            ExecRef::Borrowed(e) => e,
            ExecRef::Owned(e) => e,
        }
    }
}

/// Iterator over consecutive batches. Nothing is computed until `next` is
/// called; each refill computes at most `workers` batches in parallel.
pub struct BatchStream<'a, 'g> {
    exec: ExecRef<'a, 'g>,
    next_index: u64,
    end_index: Option<u64>,
    buffer: VecDeque<Batch>,
    keep: Option<BTreeSet<String>>,
    failed: bool,
}

impl<'g> BatchStream<'g, 'g> {
    fn owned(exec: Executor<'g>, start_index: u64) -> Self {
        BatchStream {
            exec: ExecRef::Owned(Box::new(exec)),
            next_index: start_index,
            end_index: None,
            buffer: VecDeque::new(),
            keep: None,
            failed: false,
        }
    }
}

impl BatchStream<'_, '_> {
    /// Keep only these nodes in yielded batches (all nodes when empty).
    pub fn keep(mut self, node_names: &[&str]) -> Self {
        self.keep = (!node_names.is_empty()).then(|| node_names.iter().map(|s| s.to_string()).collect());
        self
    }

    /// Stop before `end_index` (exclusive).
    pub fn until(mut self, end_index: u64) -> Self {
        self.end_index = Some(end_index);
        self
    }

    /// Index of the next batch to be computed (not yet buffered).
    pub fn next_index(&self) -> u64 {
        self.next_index
    }
}

impl Iterator for BatchStream<'_, '_> {
    type Item = Result<Batch, ExecError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        if self.buffer.is_empty() {
            let end = self.end_index.unwrap_or(u64::MAX);
            let n = (self.exec.get().workers.max(1) as u64).min(end.saturating_sub(self.next_index));
            if n == 0 {
                return None;
            }
            let indices: Vec<u64> = (self.next_index..self.next_index + n).collect();
            self.next_index += n;
            match self.exec.get().run_indices(&indices) {
                Ok(batches) => self.buffer.extend(batches),
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            }
        }
        let mut b = self.buffer.pop_front()?;
        if let Some(keep) = &self.keep {
            b.retain_nodes(keep);
        }
        Some(Ok(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ma2_graph, GraphSpec, NodeSpec};
    use crate::ops::OpRegistry;
    use std::sync::atomic::AtomicUsize;
    use std::sync::Arc;

    fn counting_registry(counter: Arc<AtomicUsize>) -> OpRegistry {
        let mut r = OpRegistry::builtin();
        let ma2 = r.get("ma2").unwrap();
        r.register_fn("counted_ma2", move |inputs, args, rng| {
            counter.fetch_add(1, Ordering::SeqCst);
            ma2.eval(inputs, args, rng)
        });
        r
    }

    fn counted_ma2(counter: Arc<AtomicUsize>) -> CompiledGraph {
        let g = ma2_graph(vec![0.2; 20]);
        let sim = g.node("sim").unwrap().clone();
        let g = g
            .replace_node(
                "sim",
                NodeSpec {
                    op: crate::graph::OpRef::builtin("counted_ma2"),
                    ..sim
                },
            )
            .unwrap();
        g.compile_with(&counting_registry(counter)).unwrap()
    }

    #[test]
    fn constant_plus_one() {
        let g = GraphSpec::new()
            .with_node(NodeSpec::constant("c", vec![5.0]))
            .and_then(|g| g.with_node(NodeSpec::operation("op", "add").parents(["c"]).args(vec![1.0])))
            .unwrap();
        let cg = g.compile().unwrap();
        let b = run_batch(&cg, 0, 0, 3, Batch::empty(0, 3)).unwrap();
        assert_eq!(b.get("c").unwrap().as_slice(), &[5.0, 5.0, 5.0]);
        assert_eq!(b.get("op").unwrap().as_slice(), &[6.0, 6.0, 6.0]);
    }

    #[test]
    fn precomputed_simulator_is_skipped() {
        let counter = Arc::new(AtomicUsize::new(0));
        let cg = counted_ma2(counter.clone());
        let full = run_batch(&cg, 4, 9, 5, Batch::empty(4, 5)).unwrap();
        counter.store(0, Ordering::SeqCst);
        let mut pre = Batch::empty(4, 5);
        pre.insert("sim", full.get("sim").unwrap().clone());
        let again = run_batch(&cg, 4, 9, 5, pre).unwrap();
        assert_eq!(counter.load(Ordering::SeqCst), 0);
        assert!(full.bit_eq(&again));
    }

    #[test]
    fn precomputed_shape_checked() {
        let cg = ma2_graph(vec![0.2; 20]).compile().unwrap();
        let mut pre = Batch::empty(0, 2);
        pre.insert("sim", NodeValues::new(vec![3], 2, vec![0.0; 6]).unwrap());
        assert!(matches!(
            run_batch(&cg, 0, 0, 2, pre),
            Err(ExecError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn batches_are_deterministic() {
        let cg = ma2_graph(vec![0.2; 20]).compile().unwrap();
        let a = run_batch(&cg, 0, 0, 10, Batch::empty(0, 10)).unwrap();
        let b = run_batch(&cg, 0, 0, 10, Batch::empty(0, 10)).unwrap();
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let cg = ma2_graph(vec![0.2; 20]).compile().unwrap();
        let idx: Vec<u64> = (0..10).collect();
        let one = parallel_run(&cg, 3, 7, &idx, 1).unwrap();
        let four = parallel_run(&cg, 3, 7, &idx, 4).unwrap();
        assert_eq!(one.len(), 10);
        assert!(one.iter().zip(&four).all(|(a, b)| a.bit_eq(b)));
        assert!(parallel_run(&cg, 3, 7, &[], 2).unwrap().is_empty());
        let shuffled = parallel_run(&cg, 3, 7, &[5, 1, 3], 2).unwrap();
        assert_eq!(shuffled.iter().map(Batch::batch_index).collect::<Vec<_>>(), [1, 3, 5]);
        assert!(matches!(
            parallel_run(&cg, 3, 7, &idx, 0),
            Err(ExecError::InvalidConfig(_))
        ));
    }

    #[test]
    fn generate_is_lazy() {
        let counter = Arc::new(AtomicUsize::new(0));
        let cg = counted_ma2(counter.clone());
        counter.store(0, Ordering::SeqCst);
        let batches: Vec<Batch> = generate(&cg, 1, 2, &["sim"], 0)
            .take(3)
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(counter.load(Ordering::SeqCst), 6);
        assert!(batches.iter().all(|b| b.values().len() == 1));
        counter.store(0, Ordering::SeqCst);
        {
            let mut s = generate(&cg, 1, 2, &[], 0);
            s.next().unwrap().unwrap();
        }
        assert_eq!(counter.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn generated_stream_matches_parallel_run() {
        let cg = ma2_graph(vec![0.2; 20]).compile().unwrap();
        let exec = Executor::new(&cg, 5, 4).workers(3);
        let streamed: Vec<Batch> = exec.generate(0).take(7).collect::<Result<_, _>>().unwrap();
        let direct = parallel_run(&cg, 5, 4, &(0..7).collect::<Vec<_>>(), 1).unwrap();
        assert!(streamed.iter().zip(&direct).all(|(a, b)| a.bit_eq(b)));
    }

    #[test]
    fn failure_reports_lowest_batch() {
        let mut r = OpRegistry::builtin();
        r.register_fn("fragile", |inputs, _args, rng| {
            if matches!(rng.batch_index(), 13 | 29) {
                Err("boom".into())
            } else {
                Ok(inputs[0].to_vec())
            }
        });
        let cg = GraphSpec::new()
            .with_node(NodeSpec::prior("p", "uniform").args(vec![0.0, 2.0]))
            .and_then(|g| g.with_node(NodeSpec::operation("f", "fragile").parents(["p"])))
            .unwrap()
            .compile_with(&r)
            .unwrap();
        let idx: Vec<u64> = (0..40).collect();
        for workers in [1, 2, 4] {
            let e = parallel_run(&cg, 0, 8, &idx, workers).unwrap_err();
            assert_eq!(e.batch_index(), Some(13));
            assert!(matches!(e, ExecError::OpFailure { element: Some(0), .. }));
        }
    }

    #[test]
    fn unrelated_node_does_not_perturb_streams() {
        let g = ma2_graph(vec![0.2; 20]);
        let h = g
            .add_node(NodeSpec::prior("extra", "normal").args(vec![0.0, 1.0]))
            .unwrap();
        let (cg, ch) = (g.compile().unwrap(), h.compile().unwrap());
        let a = run_batch(&cg, 2, 2, 6, Batch::empty(2, 6)).unwrap();
        let b = run_batch(&ch, 2, 2, 6, Batch::empty(2, 6)).unwrap();
        for n in ["t1", "t2", "sim", "d"] {
            assert_eq!(a.get(n), b.get(n));
        }
    }
}
