//! Likelihood-free inference on directed graphs of priors, simulators,
//! summaries and distances.
//!
//! A [`graph::GraphSpec`] is compiled once, then evaluated batch by batch
//! by the [`executor`]. Every random draw comes from a counter-based stream
//! keyed by `(root seed, batch index, node name)`, so results do not depend
//! on worker count or scheduling. The [`methods`] build on this: rejection
//! ABC, population Monte Carlo ABC and GP-surrogate optimization.

pub mod cli;
pub mod components;
pub mod distributions;
pub mod executor;
pub mod external;
pub mod gp;
pub mod graph;
pub mod linalg;
pub mod methods;
pub mod ops;
pub mod rng;
pub mod store;
