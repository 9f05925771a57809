use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("parameter {0} was never used in the recorded forward pass")]
    Detached(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid network: {0}")]
    Network(String),

    #[error("training diverged (loss = {0})")]
    Divergence(f64),

    #[error("{0}")]
    Refused(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
