//! Error type shared by all modules.
//!
//! Two failure families matter to callers: bad input (malformed files,
//! inconsistent configuration) and numerical breakdown (divergent training,
//! non-finite losses). The CLI maps them to distinct exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed text input. `line` is 1-based within the offending file.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Inconsistent arguments, missing files, out-of-range values.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Non-finite or divergent numerics; rerun with different
    /// hyperparameters rather than trusting partial output.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse { line, message: message.into() }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Error::Numerical(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
