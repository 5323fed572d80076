use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Errors raised by the file formats, configuration and orchestration layers.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] deepin_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A dataset cell that could not be used. `row` counts file lines, so the
    /// header is row 1.
    #[error("{path}: row {row}, column {column}: {message}")]
    Cell {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },
    #[error("{path}: {message}")]
    Dataset { path: PathBuf, message: String },
    #[error("{path}: malformed model document: {message}")]
    MalformedModel { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    ModelVersion { path: PathBuf, message: String },
    #[error("{path}: invalid config: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{0}")]
    Contract(String),
}

impl HarnessError {
    /// Process exit code: 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Core(e) if !e.is_contract_violation() => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}
