use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed input: {0}")]
    MalformedInput(String),

    #[error("IMU gap of {gap:.3} s between t={from:.6} and t={to:.6}")]
    ImuGap { from: f64, to: f64, gap: f64 },

    #[error("IMU stream does not cover [{t_begin:.6}, {t_end:.6}]")]
    Coverage { t_begin: f64, t_end: f64 },

    #[error("anchor index {i} > {j}")]
    Index { i: usize, j: usize },

    #[error("time {t:.6} outside [{lo:.6}, {hi:.6}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },

    #[error("only {found} valid correspondences, need {required}")]
    Starvation { found: usize, required: usize },

    #[error("covariance is singular (condition {condition:.3e})")]
    SingularCovariance { condition: f64 },

    #[error("numerical failure: {0}")]
    Numerical(&'static str),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("scan has {hits} hits, need at least {required}")]
    EmptyScan { hits: usize, required: usize },

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("{path}:{line}: {msg}")]
    Format { path: PathBuf, line: usize, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
