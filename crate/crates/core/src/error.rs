//! Crate-wide error type with a stable mapping to process exit codes.

/// Errors produced by the toolkit.
///
/// The variants mirror the CLI exit-code contract: validation problems
/// (bad configuration, missing files) exit 2, data problems (malformed or
/// unsorted input) exit 3, and everything else exits 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }

    /// Exit code for the CLI: 0 ok, 2 validation, 3 data, 4 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) => 2,
            Error::Data(_) => 3,
            Error::Io(_) | Error::Internal(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
