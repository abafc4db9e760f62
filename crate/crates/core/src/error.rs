use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("token index {index} out of range (N = {n})")]
    TokenOutOfRange { index: usize, n: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dynamics diverged at t = {t}: {reason}")]
    Diverged { t: f64, reason: String },

    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },
}

pub type Result<T> = std::result::Result<T, CoreError>;
