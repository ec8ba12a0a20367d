use std::path::PathBuf;

use crate::tensor::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line count mismatch: {left} has {left_count} lines but {right} has {right_count}")]
    LineCountMismatch {
        left: String,
        left_count: usize,
        right: String,
        right_count: usize,
    },

    #[error("{path}:{line}: {message}")]
    Corpus { path: String, line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("vocabulary: {0}")]
    Vocab(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("sari: {0}")]
    Sari(String),

    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for numeric failures, 2 for usage and file errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Tensor(_) | Error::Diverged { .. } => 1,
            _ => 2,
        }
    }
}
