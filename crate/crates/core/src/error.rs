use thiserror::Error;

/// Errors produced by the reconstruction library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index enumeration would exceed the cap of {cap} members (cutoff {cutoff})")]
    ResourceLimit { cap: usize, cutoff: f64 },

    #[error("data error: {0}")]
    Data(String),

    #[error("grid too coarse: Pi(n) = {pi_bar} is not below 1")]
    GridTooSmall { pi_bar: f64 },

    #[error("cutoff too large for horizon: exponent {exponent} would overflow")]
    Overflow { exponent: f64 },

    #[error("Picard iteration did not converge after {sweeps} sweeps (last residual {last:e})")]
    NonConvergence {
        sweeps: usize,
        last: f64,
        residuals: Vec<f64>,
    },

    #[error("invalid state: {0}")]
    State(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("oracle failure: {0}")]
    OracleFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
