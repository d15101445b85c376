use thiserror::Error;

/// Errors produced by the statistical engines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("posterior not proper: Beta({alpha}, {beta})")]
    ImproperPosterior { alpha: f64, beta: f64 },

    #[error("MLE undefined: {0}")]
    MleUndefined(String),

    #[error("root solver failed: {0}")]
    Solver(String),

    #[error("insufficient simulations to resolve spending increments: need at least {required}, got {got}")]
    InsufficientSimulations { required: usize, got: usize },

    #[error("data length mismatch: expected {expected}, got {got}")]
    DataLength { expected: usize, got: usize },

    #[error("invalid observation at index {index}: {reason}")]
    InvalidObservation { index: usize, reason: String },

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serialization(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
