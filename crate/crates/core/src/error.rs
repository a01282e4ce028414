use thiserror::Error;

/// Errors produced by the pricing, simulation and hedging stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("correlation matrix is not symmetric positive semi-definite")]
    NotPositiveSemiDefinite,

    #[error("spot {value} outside interpolation domain [{lo}, {hi}] on axis {axis}")]
    Extrapolation {
        axis: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("no tensor stored for valuation day {day}; banks are per-day, time is never interpolated")]
    DayNotInBank { day: f64 },

    #[error("episode is terminal; reset before stepping")]
    EpisodeTerminal,

    #[error("training diverged at update {update}: critic loss {loss} exceeded guard")]
    TrainingDiverged { update: usize, loss: f64 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
