//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Broad category of a failure, used by the command-line front end to pick
/// an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}, column '{column}': cannot parse '{token}' as a number")]
    NonNumericCell {
        row: usize,
        column: String,
        token: String,
    },
    #[error("row {row}, column '{column}': {message}")]
    BadCell {
        row: usize,
        column: String,
        message: String,
    },
    #[error("label column '{0}' not found in header")]
    MissingLabelColumn(String),
    #[error("row {row}, label column '{column}': value '{value}' is not binary")]
    NonBinaryLabel {
        row: usize,
        column: String,
        value: String,
    },
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("sample '{sample}' has {total} reads, fewer than the requested depth {depth}")]
    InsufficientDepth {
        sample: String,
        total: u64,
        depth: u64,
    },
    #[error("class {class} has {count} member(s); at least {required} needed")]
    ClassTooSmall {
        class: u8,
        count: usize,
        required: usize,
    },
    #[error("labels contain a single class; both 0 and 1 are required")]
    SingleClass,
    #[error("width mismatch: expected {expected} columns, got {actual}")]
    WidthMismatch { expected: usize, actual: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("index {index} out of bounds for length {len}")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidConfig(_) | Error::NotPositiveDefinite => ErrorKind::Config,
            Error::Numerical(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
