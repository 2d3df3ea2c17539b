use thiserror::Error;

/// Errors raised by the inversion toolkit.
#[derive(Debug, Error)]
pub enum RmaError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("distortion is undefined for the zero vector")]
    ZeroVector,

    #[error("singular or indefinite system: {0}")]
    Singular(String),

    #[error("dense oracle limited to {max} parameters, got {got}")]
    TooLarge { got: usize, max: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, RmaError>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(RmaError::DimensionMismatch { expected, got })
    }
}
