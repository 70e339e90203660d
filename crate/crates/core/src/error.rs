use thiserror::Error;

/// Errors raised by lab operations.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("validation error: {check} violated at ({row}, {col}) by {magnitude:e}")]
    Validation {
        check: String,
        row: usize,
        col: usize,
        magnitude: f64,
    },

    #[error("transience error: {0}")]
    Transience(String),

    /// Carries the best iterate and its residual so callers can inspect them.
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    Convergence {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    /// A truncated problem failed; `partial` holds the iterates solved so far.
    #[error("truncation level {level} failed: {source}")]
    TruncationFailed {
        level: usize,
        partial: Vec<Vec<f64>>,
        source: Box<LabError>,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::InvalidArgument(msg.into()))
}
