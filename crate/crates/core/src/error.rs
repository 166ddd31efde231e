//! Error type shared by every module in the crate.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Caller passed inconsistent shapes, out-of-range values or otherwise
    /// unusable arguments.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A text input (RTTM, hypothesis file, tensor file, ...) could not be
    /// parsed. `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A semantic precondition failed: empty reference for scoring, an
    /// overlap target the simulator cannot meet, and similar.
    #[error("{0}")]
    Semantic(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn semantic(msg: impl Into<String>) -> Self {
        Error::Semantic(msg.into())
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, message: msg.into() }
    }
}
