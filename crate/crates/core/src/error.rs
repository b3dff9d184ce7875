use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FfError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FfError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FfError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, FfError>;
