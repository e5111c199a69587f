use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TearsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TearsError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate item id {0}")]
    DuplicateItem(String),
    #[error("duplicate rating for user {user}, item {item}")]
    DuplicateRating { user: String, item: String },
    #[error("dataset is empty after filtering")]
    EmptyDataset,
    #[error("unknown item id {0}")]
    UnknownItem(String),
    #[error("unknown user id {0}")]
    UnknownUser(String),
    #[error("unknown genre {0}")]
    UnknownGenre(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("missing summary for user {0}")]
    MissingSummary(String),
    #[error("generation failed after {attempts} attempts: {message}")]
    Generation { attempts: usize, message: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl TearsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TearsError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        TearsError::InvalidArgument(msg.into())
    }
}
