use std::fmt;

use thiserror::Error;

/// Tensor mode, used to point at the offending axis in index errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    First,
    Second,
    Third,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::First => "mode-1",
            Axis::Second => "mode-2",
            Axis::Third => "mode-3",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{axis} index {index} out of range 1..={extent}")]
    IndexOutOfRange {
        axis: Axis,
        index: usize,
        extent: usize,
    },

    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: String, right: String },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-finite value at flat position {0}")]
    NonFinite(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dense allocation of {rows}x{cols} exceeds the limit of {limit} entries")]
    Capacity {
        rows: usize,
        cols: usize,
        limit: usize,
    },

    #[error("malformed {format} data at byte offset {offset}: {message}")]
    Format {
        format: &'static str,
        offset: u64,
        message: String,
    },

    #[error("damped normal matrix is not positive definite (mu = {mu:e})")]
    Factorization { mu: f64 },

    #[error("solver diverged at iteration {iter}: factorization kept failing up to mu = {mu:e}")]
    Divergence { iter: usize, mu: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
