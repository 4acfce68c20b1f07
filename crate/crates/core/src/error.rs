use thiserror::Error;

/// Errors raised by the geometry, constraint, projection and sampling layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("particle index {index} out of range for {n} particles")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("particle index {0} repeated within one constraint")]
    RepeatedIndex(usize),

    #[error("degenerate geometry at particles {indices:?}: {reason}")]
    Degenerate {
        indices: Vec<usize>,
        reason: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("multiplier system is numerically singular (condition estimate {condition:e})")]
    SingularSystem { condition: f64 },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("step {step} outside schedule range 0..={steps}")]
    StepOutOfRange { step: usize, steps: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
