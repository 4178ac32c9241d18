//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("empty sample set: {0}")]
    EmptySample(String),

    /// The variational objective left the representable range (exp or power
    /// blow-up in the conjugate, or |estimate| past the divergence cap).
    #[error("objective diverged (magnitude {magnitude:.3e})")]
    Diverged { magnitude: f64 },

    #[error("checkpoint ring does not cover every step (expected step {expected}, found {found:?})")]
    MissingCheckpoints {
        expected: usize,
        found: Option<usize>,
    },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("csv parse error at row {row}: {msg}")]
    CsvFormat { row: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParam(msg.into())
    }

    /// True when the error is the "objective diverged" signal, which runs
    /// treat as a termination condition rather than a failure.
    pub fn is_diverged(&self) -> bool {
        matches!(self, Error::Diverged { .. })
    }
}
