use std::path::PathBuf;

use thiserror::Error;

use crate::heads::HeadKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    TrainingDiverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("parse error in {source_name} at byte offset {offset}: {message}")]
    Parse {
        source_name: String,
        offset: usize,
        message: String,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint holds a {found} head but {expected} was expected")]
    HeadKindMismatch { expected: HeadKind, found: HeadKind },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
