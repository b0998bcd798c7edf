use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("index error: {0}")]
    Index(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("validation error [{rule}]: {detail}")]
    Validation { rule: &'static str, detail: String },

    #[error("length error: sequence of {len} exceeds limit {limit}")]
    Length { len: usize, limit: usize },

    #[error("{path}:{line}: {source}")]
    AtLine {
        path: PathBuf,
        line: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("task {task}: {source}")]
    Task {
        task: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn validation(rule: &'static str, detail: impl Into<String>) -> Self {
        Error::Validation {
            rule,
            detail: detail.into(),
        }
    }

    /// Name of the violated rule, when this is (or wraps) a validation error.
    pub fn rule(&self) -> Option<&'static str> {
        match self {
            Error::Validation { rule, .. } => Some(rule),
            Error::AtLine { source, .. } | Error::Task { source, .. } => source.rule(),
            _ => None,
        }
    }
}
