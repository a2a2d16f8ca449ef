//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("sample alignment failed: {0}")]
    Alignment(String),
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("time split error: {0}")]
    Split(String),
    #[error("internal consistency: {0}")]
    Consistency(String),
    #[error("key error: {0}")]
    Key(String),
    #[error("value out of encodable range: {0}")]
    Range(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 config/data, 3 model, 4 protocol.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Model(_) => 3,
            Error::Protocol(_) | Error::Key(_) | Error::Range(_) | Error::Consistency(_) => 4,
            _ => 2,
        }
    }
}
