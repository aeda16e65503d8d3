use std::io;

use thiserror::Error;

/// Errors produced by the quantization library.
#[derive(Debug, Error)]
pub enum BoltError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("ground truth is not available for this dataset")]
    MissingGroundTruth,

    #[error("zero variance in correlation input")]
    ZeroVariance,

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl BoltError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        BoltError::InvalidInput(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        BoltError::Format {
            offset,
            message: msg.into(),
        }
    }
}

pub type Result<T, E = BoltError> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(values: &[f32], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(BoltError::NonFinite(what))
    }
}
