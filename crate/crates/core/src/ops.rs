//! Node operations and the registry that resolves op names at compile time.
//!
//! Every non-constant, non-prior node is backed by a [`NodeOp`]. An op sees
//! its parent outputs for one element (or, when vectorized, for the whole
//! batch), the node's static args, and the node's own random stream.

use crate::components::{self, DistanceSpec};
use crate::rng::RngStream;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

/// Batch-level context handed to vectorized ops.
#[derive(Debug, Clone, Copy)]
pub struct OpContext<'a> {
    pub node: &'a str,
    pub parents: &'a [String],
    pub root_seed: u64,
    pub batch_index: u64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpError {
    pub element: Option<usize>,
    pub message: String,
}

impl OpError {
    pub fn batch(message: impl Into<String>) -> Self {
        Self {
            element: None,
            message: message.into(),
        }
    }
}

pub trait NodeOp: Send + Sync {
    /// Evaluates one element. `inputs[p]` is the output of parent `p`.
    fn eval(&self, inputs: &[&[f64]], args: &[f64], rng: &mut RngStream) -> Result<Vec<f64>, String>;

    /// Evaluates a whole batch; `inputs[e][p]` is parent `p` for element `e`.
    fn eval_batch(
        &self,
        _ctx: &OpContext<'_>,
        inputs: &[Vec<&[f64]>],
        args: &[f64],
        rng: &mut RngStream,
    ) -> Result<Vec<Vec<f64>>, OpError> {
        inputs
            .iter()
            .enumerate()
            .map(|(e, row)| {
                self.eval(row, args, rng).map_err(|message| OpError {
                    element: Some(e),
                    message,
                })
            })
            .collect()
    }

    /// Ops that can only run a batch at a time (external programs).
    fn batch_only(&self) -> bool {
        false
    }
}

/// Adapts a closure into a [`NodeOp`].
pub struct FnOp<F>(pub F);

impl<F> NodeOp for FnOp<F>
where
    F: Fn(&[&[f64]], &[f64], &mut RngStream) -> Result<Vec<f64>, String> + Send + Sync,
{
    fn eval(&self, inputs: &[&[f64]], args: &[f64], rng: &mut RngStream) -> Result<Vec<f64>, String> {
        (self.0)(inputs, args, rng)
    }
}

#[derive(Clone, Default)]
pub struct OpRegistry {
    ops: BTreeMap<String, Arc<dyn NodeOp>>,
}

impl fmt::Debug for OpRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.ops.keys()).finish()
    }
}

impl OpRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry preloaded with every builtin op.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register_fn("ma2", |inputs, args, rng| {
            let p = flat(inputs, args);
            let [t1, t2, n] = take3(&p, "ma2", "t1, t2, n_obs")?;
            components::simulate_ma2(t1, t2, as_count(n)?, rng).map_err(|e| e.to_string())
        });
        r.register_fn("gaussian", |inputs, args, rng| {
            let p = flat(inputs, args);
            let [mu, sigma, n] = take3(&p, "gaussian", "mu, sigma, n_obs")?;
            components::simulate_gaussian(mu, sigma, as_count(n)?, rng).map_err(|e| e.to_string())
        });
        r.register_fn("mean", |inputs, _args, _rng| {
            components::summary_mean(&concat(inputs))
                .map(|v| vec![v])
                .map_err(|e| e.to_string())
        });
        r.register_fn("variance", |inputs, _args, _rng| {
            components::summary_variance(&concat(inputs))
                .map(|v| vec![v])
                .map_err(|e| e.to_string())
        });
        r.register_fn("autocov", |inputs, args, _rng| {
            let lag = match args {
                [] => 1,
                [k] => as_count(*k)?,
                _ => return Err("autocov takes a single lag argument".into()),
            };
            components::summary_autocov(&concat(inputs), lag)
                .map(|v| vec![v])
                .map_err(|e| e.to_string())
        });
        r.register_fn("identity", |inputs, _args, _rng| Ok(concat(inputs)));
        r.register_fn("euclidean", |inputs, _args, _rng| {
            dist(inputs, &DistanceSpec::euclidean())
        });
        r.register_fn("minkowski", |inputs, args, _rng| {
            let p = *args.first().ok_or("minkowski needs p")?;
            dist(inputs, &DistanceSpec::minkowski(p).map_err(|e| e.to_string())?)
        });
        r.register_fn("weighted_euclidean", |inputs, args, _rng| {
            dist(
                inputs,
                &DistanceSpec::weighted_euclidean(args.to_vec()).map_err(|e| e.to_string())?,
            )
        });
        r.register_fn("add", |inputs, args, _rng| {
            Ok(elementwise(inputs, args.iter().sum(), 0.0, |a, b| a + b))
        });
        r.register_fn("mul", |inputs, args, _rng| {
            Ok(elementwise(inputs, args.iter().product(), 1.0, |a, b| a * b))
        });
        r
    }

    pub fn register(&mut self, name: impl Into<String>, op: Arc<dyn NodeOp>) -> &mut Self {
        self.ops.insert(name.into(), op);
        self
    }

    pub fn register_fn<F>(&mut self, name: impl Into<String>, f: F) -> &mut Self
    where
        F: Fn(&[&[f64]], &[f64], &mut RngStream) -> Result<Vec<f64>, String> + Send + Sync + 'static,
    {
        self.register(name, Arc::new(FnOp(f)))
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn NodeOp>> {
        self.ops.get(name).cloned()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.ops.keys().map(String::as_str)
    }
}

fn flat(inputs: &[&[f64]], args: &[f64]) -> Vec<f64> {
    inputs
        .iter()
        .flat_map(|s| s.iter().copied())
        .chain(args.iter().copied())
        .collect()
}

fn concat(inputs: &[&[f64]]) -> Vec<f64> {
    inputs.iter().flat_map(|s| s.iter().copied()).collect()
}

fn take3(p: &[f64], op: &str, names: &str) -> Result<[f64; 3], String> {
    p.try_into().map_err(|_| {
        format!(
            "{op} expects 3 scalar inputs ({names}) from parents then args, got {}",
            p.len()
        )
    })
}

fn as_count(x: f64) -> Result<usize, String> {
    if x >= 0.0 && x.fract() == 0.0 && x < 1e15 {
        Ok(x as usize)
    } else {
        Err(format!("expected a nonnegative integer, got {x}"))
    }
}

/// Distance ops receive `[simulated summaries, observed summaries]`.
fn dist(inputs: &[&[f64]], spec: &DistanceSpec) -> Result<Vec<f64>, String> {
    match inputs {
        [sim, obs] => components::distance(sim, obs, spec)
            .map(|d| vec![d])
            .map_err(|e| e.to_string()),
        _ => Err("distance expects simulated and observed summary vectors".into()),
    }
}

/// Folds parents elementwise (length-1 inputs broadcast), then applies the
/// folded scalar args.
fn elementwise(inputs: &[&[f64]], scalar: f64, unit: f64, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let len = inputs.iter().map(|s| s.len()).max().unwrap_or(1).max(1);
    (0..len)
        .map(|i| {
            let acc = inputs
                .iter()
                .map(|s| if s.len() == 1 { s[0] } else { s[i] })
                .fold(unit, &f);
            f(acc, scalar)
        })
        .collect()
}
