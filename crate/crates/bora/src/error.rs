//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the adapter library.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible matrix or vector shapes.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid argument outside shape concerns (bad range, zero fan-in, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Numerical failure: non-finite values, non-convergence, degenerate parameters.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training diverged or failed at a specific step.
    #[error("training failed at step {step}: {reason}")]
    Training { step: usize, reason: String },

    /// Malformed or incompatible on-disk data.
    #[error("format error: {0}")]
    Format(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
