use std::path::{Path, PathBuf};

/// Failure to read or write one of the on-disk formats.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{}: {error}", path.display())]
    Io { path: PathBuf, error: std::io::Error },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("{}: {error}", path.display())]
    Core { path: PathBuf, error: tcfa_core::Error },
}

impl FormatError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io { path: path.to_path_buf(), error: source }
    }

    pub(crate) fn parse(path: &Path, message: impl Into<String>) -> Self {
        FormatError::Parse { path: path.to_path_buf(), message: message.into() }
    }

    pub(crate) fn core(path: &Path, source: tcfa_core::Error) -> Self {
        FormatError::Core { path: path.to_path_buf(), error: source }
    }
}

pub type FormatResult<T> = Result<T, FormatError>;
