use std::path::PathBuf;

use thiserror::Error;

use crate::oracle::SourceError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("{path}: line {line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("duplicate unit id {0}")]
    DuplicateUnit(usize),

    #[error("{0}")]
    InvalidInput(String),

    #[error("unit {unit} has zero variance; correlation distance is undefined")]
    ZeroVariance { unit: usize },

    #[error("unit {0} is not live in this forest")]
    DeadUnit(usize),

    #[error("lattice violation in tree {tree}, node {node}: {reason}")]
    LatticeViolation { tree: usize, node: usize, reason: String },

    #[error(transparent)]
    Source(#[from] SourceError),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig { field, reason: reason.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
