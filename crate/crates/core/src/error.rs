use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied malformed data: wrong dimensions, NaN, out-of-range values.
    #[error("input error: {0}")]
    Input(String),

    /// Operation is not valid in the current state (terminated episode, stale cache, ...).
    #[error("state error: {0}")]
    State(String),

    /// Configuration cannot be realized (invalid values, placement budget exhausted, ...).
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },

    /// Optimization diverged; `dump` carries diagnostic values for inspection.
    #[error("training error: {message}")]
    Training { message: String, dump: String },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }
}
