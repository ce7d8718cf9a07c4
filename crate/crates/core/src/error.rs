use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("step size underflow at t = {t}: the field is too stiff or singular here")]
    StepSizeUnderflow { t: f64 },

    #[error("non-finite derivative at t = {t}")]
    NonFiniteDerivative { t: f64 },

    #[error("intensity overflow (lambda = {lambda:.3e} at t = {t}): dynamics diverged")]
    IntensityOverflow { lambda: f64, t: f64 },

    #[error("event at t = {t} lies outside the observation window [{t0}, {t1}]")]
    EventOutsideWindow { t: f64, t0: f64, t1: f64 },

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
