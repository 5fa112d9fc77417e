use alloc::string::String;

/// Failure of a single forward-operator evaluation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ForwardError {
    /// The rod integrator produced non-finite values.
    #[error("rod solver diverged at step {step}")]
    Diverged { step: usize },
    /// Parameters outside the physical domain (e.g. nonpositive modulus).
    #[error("parameter outside the physical domain: {0}")]
    Domain(String),
    /// The segmented image carried no set pixel, so no distance is defined.
    #[error("degenerate observation: {0}")]
    Degenerate(String),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("forward evaluation failed at t = {t}: {source}")]
    Forward { t: f64, source: ForwardError },
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("fit error: {0}")]
    Fit(String),
}

impl From<ForwardError> for Error {
    fn from(source: ForwardError) -> Self {
        Error::Forward {
            t: f64::NAN,
            source,
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidInput(alloc::format!($($arg)*))
    };
}

macro_rules! config_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Config(alloc::format!($($arg)*))
    };
}

pub(crate) use config_err;
pub(crate) use invalid;
