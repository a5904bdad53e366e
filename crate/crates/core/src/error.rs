use thiserror::Error;

use crate::integrate::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A stored forward state contains an infinity or NaN. The trajectory up
    /// to and including the offending step is attached.
    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize, partial: Box<Trajectory> },

    #[error("dynamic scaling failed at step {step}: vjp still non-finite with scale {scale:e}")]
    ExhaustedRescale { step: usize, scale: f64 },

    #[error("high-precision accumulator became non-finite at step {step}")]
    NonFiniteAccumulator { step: usize },

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
