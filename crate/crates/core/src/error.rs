use thiserror::Error;

/// Errors produced by the simulator and the verification routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An intensity family does not satisfy the two-sided rate bound.
    #[error("bound violation in {family}: {constraint}")]
    BoundViolation { family: String, constraint: String },

    /// A theorem hypothesis or parameter constraint failed.
    #[error("{0}")]
    Hypothesis(String),

    #[error("quadrature did not converge (achieved error estimate {achieved:e}, requested {requested:e})")]
    QuadratureNonconvergence { achieved: f64, requested: f64 },

    #[error("runaway event count: more than {limit} events before t = {time} (model bug?)")]
    RunawayEvents { limit: u64, time: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
