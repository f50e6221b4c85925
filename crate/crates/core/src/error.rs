use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("step size underflow at τ = {tau} (h = {step:e})")]
    StepSizeUnderflow { tau: f64, step: f64, state: Vec<f64> },

    #[error("non-finite state encountered at τ = {tau}")]
    NonFinite { tau: f64, state: Vec<f64> },

    #[error("step budget of {0} exhausted")]
    TooManySteps(usize),

    #[error("elliptic modulus k = {0} outside [0, 1]")]
    ModulusOutOfRange(f64),

    #[error("complete elliptic integral diverges at k = {0}")]
    EllipticOverflow(f64),

    #[error("{0}")]
    Domain(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
