use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("degenerate trajectory: {0}")]
    DegenerateTrajectory(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("ambiguous input: {0}")]
    Ambiguous(String),

    #[error("insufficient frames: need at least {needed}, got {got}")]
    InsufficientFrames { needed: usize, got: usize },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("locked: {0} is held by another writer")]
    Locked(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable identifier for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Degenerate(_) => "degenerate_input",
            Error::DegenerateTrajectory(_) => "degenerate_trajectory",
            Error::Parse { .. } => "parse",
            Error::Truncated(_) => "truncated",
            Error::Ambiguous(_) => "ambiguous",
            Error::InsufficientFrames { .. } => "insufficient_frames",
            Error::Alignment(_) => "alignment",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Shape(_) => "shape_mismatch",
            Error::Empty(_) => "empty",
            Error::Diverged(_) => "diverged",
            Error::Locked(_) => "locked",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
