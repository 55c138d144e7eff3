//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while building models, fusing mixtures or
/// running a simulation.
#[derive(Debug, Error)]
pub enum Error {
    /// Vector or matrix dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A covariance matrix is not symmetric positive semi-definite within
    /// repair tolerance.
    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    /// A linear solve or factorization failed on degenerate input.
    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    /// An operation received input it cannot produce a meaningful result for
    /// (empty merge group, zero total weight, ...).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A parameter value is outside its legal domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Weight rescaling was requested for an empty mixture while the
    /// consensus cardinality is positive.
    #[error("degenerate rescale: mixture weight sum is zero but consensus cardinality is {0}")]
    DegenerateRescale(f64),

    /// The communication graph is not connected.
    #[error("graph is not connected")]
    DisconnectedGraph,

    /// Random network generation exhausted its attempt budget.
    #[error("no network with the requested topology found after {attempts} attempts")]
    InfeasibleTopology { attempts: usize },

    /// A configuration file or parameter set failed validation.
    #[error("configuration error: {0}")]
    Config(String),

    /// Underlying I/O failure while reading or writing artifacts.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
