use thiserror::Error;

/// Contract violations raised by tensor operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{op}: invalid argument: {detail}")]
    InvalidArg { op: &'static str, detail: String },

    #[error("backward requires a scalar tensor, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },

    #[error("backward on an untaped tensor (no recorded forward pass, or tape already consumed)")]
    Untaped,

    #[error("attention: every key position is masked for at least one query")]
    AllMasked,

    #[error("cross_entropy: label row {row} is not one-hot")]
    NotOneHot { row: usize },

    #[error("{op}: non-finite values encountered")]
    NonFinite { op: &'static str },
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

impl TensorError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::ShapeMismatch { op, detail: detail.into() }
    }

    pub(crate) fn arg(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::InvalidArg { op, detail: detail.into() }
    }
}
