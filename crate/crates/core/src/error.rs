use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("unknown venue {venue:?} referenced at line {line}")]
    UnknownVenue { venue: String, line: u64 },
    #[error("venue {venue:?} has out-of-range coordinates ({lat}, {lon})")]
    Coordinate { venue: String, lat: f64, lon: f64 },
    #[error("duplicate venue id {0:?}")]
    DuplicateVenue(String),
    #[error("venue {0:?} has an empty category")]
    EmptyCategory(String),
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("unknown event {0:?}")]
    UnknownEvent(String),
    #[error("duplicate event id {0:?}")]
    DuplicateEvent(String),
    #[error("cannot build event profile from zero users")]
    EmptyTraining,
    #[error("random walk did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("rankings are over different item sets")]
    ItemSetMismatch,
    #[error("insufficient data for correlation")]
    InsufficientData,
    #[error("feature order mismatch: model expects {expected:?}, got {actual:?}")]
    FeatureOrderMismatch {
        expected: Vec<String>,
        actual: Vec<String>,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("infeasible synthetic config: {0}")]
    Infeasible(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
