use std::io;

use thiserror::Error;

/// Errors raised anywhere in the codec, trainer and evaluation tooling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {dim} is {got}, expected {expected}")]
    ShapeMismatch {
        op: &'static str,
        dim: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward called before any forward pass was recorded")]
    BackwardBeforeForward,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("corrupt stream at symbol {position}: {reason}")]
    CorruptStream { position: usize, reason: String },

    #[error("CDF checksum mismatch at position {position}")]
    CdfMismatch { position: usize },

    #[error("malformed container: {0}")]
    Format(String),

    #[error("training diverged at iteration {iteration}: loss {loss} exceeds {limit}")]
    Diverged {
        iteration: usize,
        loss: f64,
        limit: f64,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI's error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::BackwardBeforeForward => "backward_before_forward",
            Error::NonFinite(_) => "non_finite",
            Error::ConfigMismatch(_) => "config_mismatch",
            Error::CorruptStream { .. } => "corrupt_stream",
            Error::CdfMismatch { .. } => "cdf_mismatch",
            Error::Format(_) => "format",
            Error::Diverged { .. } => "diverged",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
