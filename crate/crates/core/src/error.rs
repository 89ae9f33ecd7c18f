use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown model id {0} (expected 1..=8)")]
    UnknownModel(u32),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty data: {0}")]
    EmptyData(&'static str),

    #[error("row {row}: feature {column} = {value} lies outside [0, 1]")]
    FeatureOutOfRange { row: usize, column: usize, value: f64 },

    #[error("point outside the unit cube: coordinate {column} = {value}")]
    QueryOutOfRange { column: usize, value: f64 },

    #[error("malformed csv at line {line}: {message}")]
    MalformedCsv { line: usize, message: String },

    #[error("malformed forest file at line {line}: {message}")]
    MalformedModel { line: usize, message: String },

    #[error("median split emptied a cell at depth {depth}: {left} left / {right} right after tie removal")]
    DegenerateMedianSplit { depth: usize, left: usize, right: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Write(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
