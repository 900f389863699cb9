use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside its valid range or has inconsistent dimensions.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The requested combination of options cannot be executed.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// A linear-algebra step failed (e.g. ill-conditioned innovation covariance).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A Kalman group test needs at least two sensors to form two subgroups.
    #[error("pool of {size} sensor(s) cannot be split into two subgroups")]
    PoolTooSmall { size: usize },

    /// An exhaustive enumeration would exceed the configured cap.
    #[error("enumeration of {required} candidates exceeds cap {cap}")]
    Feasibility { required: u128, cap: u128 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
