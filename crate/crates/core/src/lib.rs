//! Distributed multi-target tracking on a simulated sensor network.
//!
//! Every node runs a Gaussian-mixture probability hypothesis density filter
//! against its own measurements and periodically exchanges a compact slice
//! of its posterior with one-hop neighbors. The crate implements two
//! partial-consensus fusion rules (mixture pooling and per-component
//! arithmetic averaging), a generalized covariance intersection baseline,
//! and two cardinality-only consensus baselines, together with the network
//! simulation, scenario generation, accuracy metrics and the experiment
//! harness behind the `dgmphd` command-line tool.

// Negated comparisons such as `!(x > 0.0)` are deliberate throughout: they
// treat NaN as out of range where `x <= 0.0` would let it through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod config;
pub mod error;
pub mod experiment;
pub mod filter;
pub mod fusion;
pub mod gaussian;
pub mod metrics;
pub mod network;
pub mod scenario;
pub mod unscented;

pub use error::{Error, Result};
