use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {left} vs {right} ({op})")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("attention over an empty (all-masked) sequence")]
    EmptyAttention,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{0}")]
    Validation(String),

    #[error("dataset too small: {op} needs at least {needed} items, got {got}")]
    Size {
        op: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("index {index} out of range for {what} of size {len}")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {message}")]
    Training {
        epoch: usize,
        batch: usize,
        message: String,
    },

    #[error("degenerate test: {0}")]
    DegenerateTest(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short, stable category name used for machine-parsable diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::EmptyAttention => "empty-attention",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Size { .. } => "size",
            Error::Index { .. } => "index",
            Error::Format(_) => "format",
            Error::Contract(_) => "contract",
            Error::Training { .. } => "training",
            Error::DegenerateTest(_) => "degenerate-test",
            Error::Io { .. } => "io",
            Error::Json(_) => "parse",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
