use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown attribute label `{label}` for `{attribute}`")]
    Vocabulary { attribute: String, label: String },

    #[error("i/o error at {path}: {message}")]
    Io { path: PathBuf, message: String },

    #[error("checksum mismatch for {0}")]
    Checksum(PathBuf),

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },

    #[error("estimator has not been trained")]
    Untrained,

    #[error(transparent)]
    Torch(#[from] tch::TchError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }

    /// Short machine-readable tag used by the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Param(_) => "param",
            Error::Shape(_) => "shape",
            Error::Vocabulary { .. } => "vocabulary",
            Error::Io { .. } => "io",
            Error::Checksum(_) => "checksum",
            Error::Checkpoint(_) => "checkpoint",
            Error::Numerical(_) => "numerical",
            Error::NonFinite { .. } => "non_finite",
            Error::Untrained => "untrained",
            Error::Torch(_) => "torch",
        }
    }
}

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Param(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
