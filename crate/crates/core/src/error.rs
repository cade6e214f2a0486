use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TemError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TemError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("time {t} s is outside [{start}, {end})")]
    OutOfRange { t: f64, start: f64, end: f64 },

    #[error("quadrature did not converge on [{a}, {b}] (estimated error {error:e})")]
    Quadrature { a: f64, b: f64, error: f64 },

    #[error("root finder failed: {0}")]
    RootFinding(String),

    #[error("calibration infeasible: {0}")]
    InfeasibleCalibration(String),

    #[error("calibration system is singular or ill-conditioned (lambda0 = {lambda_first:e}, lambdak = {lambda_second:e})")]
    IllConditioned {
        lambda_first: f64,
        lambda_second: f64,
    },

    #[error("implausible estimate: sigma_hat = {sigma_hat:e}, delta_dis_hat = {delta_dis_hat:e}")]
    ImplausibleEstimate { sigma_hat: f64, delta_dis_hat: f64 },

    #[error("no non-sampling headroom: the discharge-only configuration is infeasible (margin {margin:.6})")]
    NoHeadroom { margin: f64 },

    #[error("kappa tuning failed: {0}")]
    Tuning(String),

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("reconstruction diverged after {iterations} iterations")]
    Diverged { iterations: usize },

    #[error("NMSE undefined: reference has zero energy")]
    UndefinedNmse,

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error at {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl TemError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TemError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        TemError::Csv {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(TemError::InvalidArgument(msg()))
    }
}
