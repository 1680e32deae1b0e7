//! Error type shared by the core crate.

use thiserror::Error;

/// Failures surfaced by catalog, pipeline, datagen and eval operations.
///
/// Tool execution failures are not errors at this level; they travel as
/// `ToolResult` values with `status = error`.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The caller broke an operation's precondition.
    #[error("usage error: {0}")]
    Usage(String),
    /// Embedded catalog or transition data disagree with each other.
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    /// Text input (plan text, JSONL, annotation documents) failed to parse.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("datagen: {0}")]
    Datagen(String),
    #[error("model endpoint: {0}")]
    Endpoint(String),
    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse { location: location.into(), message: message.into() }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
