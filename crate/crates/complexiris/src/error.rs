//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors (or a tensor and an expected geometry) disagree.
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Joint validity mask of two feature maps is empty.
    #[error("no valid overlap between masks")]
    EmptyOverlap,

    /// NaN/Inf or another numerical breakdown; the message names the
    /// offending quantity.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Malformed file contents (bad magic, truncation, bad dims, ...).
    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },

    /// Dataset-level problem (missing split, unknown identity, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn format(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
