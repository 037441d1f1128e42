use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("adaptive solver exceeded {max_steps} steps before t = {t_end}")]
    StepLimitExceeded { max_steps: usize, t_end: f64 },

    #[error("time {t} outside trajectory span [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite gradient component at index {index}")]
    NonFiniteGradient { index: usize },

    #[error("fit diverged: {0}")]
    DivergedFit(String),

    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}:{line}: timestamps not strictly increasing")]
    NonMonotoneTime { path: PathBuf, line: usize },

    #[error("{path}: run `{run}` has fewer than two rows")]
    EmptyRun { path: PathBuf, run: String },

    #[error("record spans {span} s, shorter than resampling step {dt} s")]
    SpanTooShort { span: f64, dt: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
