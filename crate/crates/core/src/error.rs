use thiserror::Error;

use crate::numerics::NumericsError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("innovation covariance singular at tick {t}: {source}")]
    SingularInnovation { t: u64, source: NumericsError },
    #[error("filter diverged at tick {t}: non-finite {what}")]
    Diverged { t: u64, what: &'static str },
    #[error("threshold undefined: calibration window has zero spread")]
    DegenerateSigma,
    #[error("need at least {needed} calibration samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("residual metric undefined for zero-norm state")]
    ZeroNorm,
    #[error("column {0:?} has no values to impute from")]
    EmptyColumn(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Json(_) => ErrorKind::Config,
            Error::Numerics(_)
            | Error::SingularInnovation { .. }
            | Error::Diverged { .. }
            | Error::DegenerateSigma
            | Error::ZeroNorm => ErrorKind::Numerical,
            Error::Data(_)
            | Error::TooFewSamples { .. }
            | Error::EmptyColumn(_)
            | Error::Io(_)
            | Error::Csv(_) => ErrorKind::Data,
        }
    }
}
