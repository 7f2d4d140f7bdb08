use std::io;

/// Failure reading or writing one of the on-disk formats.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic: expected {expected}, found {found}")]
    BadMagic { expected: String, found: String },
    #[error("truncated file: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("file size {got} bytes, expected {expected}")]
    Size { got: usize, expected: usize },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] flowscene_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FormatError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::Invalid(msg.into())
    }
}

pub type Result<T, E = FormatError> = std::result::Result<T, E>;
