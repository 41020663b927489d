use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("size error: {0}")]
    Size(String),
    #[error("singularity: {0}")]
    Singular(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("symmetry violated: {0}")]
    Symmetry(String),
    #[error("unstable system: {0}")]
    Stability(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("division by zero: {0}")]
    Division(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
