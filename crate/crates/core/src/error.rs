use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or mismatched dimensions; nothing was computed.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("state became non-finite at t = {time}")]
    Divergence { time: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (|f| = {residual:e}) near {last:?}")]
    NotConverged { iterations: usize, residual: f64, last: Vec<f64> },

    #[error("equilibrium at {point:?} has {unstable} unstable directions, expected exactly one")]
    WrongIndex { point: Vec<f64>, unstable: usize },

    #[error("drift matrix is not asymptotically stable (max real part of spectrum = {max_real})")]
    Unstable { max_real: f64 },

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("linear solve residual {residual:e} exceeds tolerance {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by the inputs rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
