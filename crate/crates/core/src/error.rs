//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("model infeasible{}", .0.as_ref().map(|d| format!(": {d}")).unwrap_or_default())]
    Infeasible(Option<String>),

    #[error("model unbounded")]
    Unbounded,

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("time limit reached before any feasible solution was found")]
    TimeLimitNoIncumbent,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("external solver error: {0}")]
    Bridge(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
