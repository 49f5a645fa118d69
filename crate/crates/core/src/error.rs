use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: malformed JSON: {message}")]
    MalformedLine {
        file: String,
        line: usize,
        message: String,
    },

    #[error("{file}:{line}: empty text")]
    EmptyText { file: String, line: usize },

    #[error("{file}:{line}: duplicate id {id:?}")]
    DuplicateId {
        file: String,
        line: usize,
        id: String,
    },

    /// The corpus or a run configuration is structurally invalid.
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("retriever index has not been built")]
    IndexNotBuilt,

    #[error("model has not been trained")]
    NotTrained,

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Plugin(#[from] crate::models::plugin::PluginError),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input data rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::MalformedLine { .. }
                | Error::EmptyText { .. }
                | Error::DuplicateId { .. }
                | Error::Validation(_)
        )
    }
}
