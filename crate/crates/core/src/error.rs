//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by panel construction, estimation and selection routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A grid failed its ordering or bounds invariants.
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// Input contained NaN or infinite values.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// Two objects that must share a shape do not.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch {
        /// Expected size along the offending axis.
        expected: usize,
        /// Actual size found.
        actual: usize,
    },

    /// An operation that requires a centered panel received an uncentered one.
    #[error("panel must be centered first")]
    NotCentered,

    /// A matrix that must be symmetric is not (beyond tolerance).
    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),

    /// Parameter outside its legal range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Iterative solver failed to converge.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// I/O failure while reading or writing artifacts.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure.
    #[error(transparent)]
    Json(#[from] serde_json::Error),

    /// CSV (de)serialization failure.
    #[error(transparent)]
    Csv(#[from] csv::Error),

    /// Malformed input file contents.
    #[error("malformed input: {0}")]
    MalformedInput(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
