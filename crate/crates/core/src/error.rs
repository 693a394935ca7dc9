use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A structural invariant (stochasticity, reversibility, contractivity, ...) failed.
    #[error("invariant violated: {invariant} (residual {residual:e})")]
    InvariantViolation { invariant: String, residual: f64 },

    #[error("contour passes within {distance:e} of the spectral point {point}")]
    IllConditionedContour { point: f64, distance: f64 },

    #[error("truncation failure: {0}")]
    TruncationFailure(String),

    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    #[error("inconsistent result: {0}")]
    Inconsistency(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::InvalidInput(msg.into()))
}
