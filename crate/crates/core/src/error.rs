use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator and the experiment runners.
#[derive(Debug, Error)]
pub enum Error {
    #[error("range error: {0}")]
    Range(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("config error in `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
