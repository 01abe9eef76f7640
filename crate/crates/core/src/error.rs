use std::path::PathBuf;

use ocvad_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite value in {term} at epoch {epoch}, batch {batch}")]
    NonFinite { term: String, epoch: usize, batch: usize },

    #[error("AUC undefined: ground truth contains only {0} frames")]
    UndefinedAuc(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing artifact from stage `{stage}`: {path}")]
    MissingArtifact { stage: String, path: PathBuf },

    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Validation(msg()))
    }
}
