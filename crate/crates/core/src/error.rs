use std::io;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// The variants map onto the CLI exit codes: argument problems exit with 2,
/// state and capacity problems with 3, and I/O or decoding problems with 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("capacity exhausted: {0}")]
    Capacity(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed data: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) => 2,
            Error::State(_) | Error::Capacity(_) => 3,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::Format(_) => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
