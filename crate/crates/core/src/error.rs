use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not line up for the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Gram matrix stayed indefinite after the maximum diagonal jitter.
    #[error("singular system while fitting {layer}: not positive definite after jitter {jitter:e}")]
    Singular { layer: String, jitter: f64 },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("format error: {0}")]
    Format(String),

    /// An artifact was produced by a different model than the one supplied.
    #[error("stale artifact: {0}")]
    Stale(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Usage(_) => 2,
            _ => 1,
        }
    }
}
