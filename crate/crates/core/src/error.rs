use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },

    #[error("line {line}: expected dimension {expected}, found {found}")]
    DimensionMismatchAt {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: {message}")]
    OutOfRange { line: usize, message: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("solver did not converge within {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("target is not in the convex hull (distance {distance:e}, tolerance {tolerance:e})")]
    Infeasible { distance: f64, tolerance: f64 },

    #[error("subset limit {limit} reached before the projected feature entered the hull")]
    SubsetLimit { limit: usize },

    #[error("support violation at index {index}: p > 0 where q = 0")]
    SupportViolation { index: usize },

    #[error("oracle supports at most {cap} examples, got {n}")]
    OracleCap { cap: usize, n: usize },

    #[error("no feasible subset found; solver tolerance fault")]
    ToleranceFault,

    #[error("unknown item id {0}")]
    UnknownItem(usize),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Toml(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
