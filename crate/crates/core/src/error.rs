use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the compression toolkit.
#[derive(Debug, Error)]
pub enum OatsError {
    /// A tensor archive could not be parsed. `offset` is the absolute byte
    /// offset in the file where the problem was detected.
    #[error("archive error at byte {offset}: {message}")]
    Archive { offset: u64, message: String },

    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),

    #[error("tensor `{name}` not found")]
    MissingTensor { name: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid sparsity pattern: {0}")]
    Pattern(String),

    #[error("infeasible budget: {0}")]
    Budget(String),

    #[error("calibration: {0}")]
    Calibration(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dtype mismatch for `{name}`: expected {expected}, found {found}")]
    Dtype {
        name: String,
        expected: &'static str,
        found: &'static str,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl OatsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        OatsError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn archive(offset: u64, message: impl Into<String>) -> Self {
        OatsError::Archive {
            offset,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, OatsError>;
