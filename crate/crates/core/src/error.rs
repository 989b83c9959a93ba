use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the assignment/learning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("no path from {origin} to {destination}")]
    NoPath { origin: String, destination: String },

    #[error("degenerate network: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid action {action} for current OD")]
    InvalidAction { action: usize },

    #[error("numerical abort: {0}")]
    Numerical(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wraps an I/O failure on `path`; a missing file becomes [`Error::FileNotFound`].
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// True for errors caused by bad inputs or configuration rather than
    /// numerical failure during a solve or training run.
    pub fn is_config_error(&self) -> bool {
        !matches!(self, Error::Numerical(_) | Error::Degenerate(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
