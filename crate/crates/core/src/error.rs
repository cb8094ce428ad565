use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("parse error at `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    /// A verifier search ran out of budget before it could certify a bound.
    #[error("verifier budget exhausted after {branches} branches (best lower bound {best_bound})")]
    Budget { branches: u64, best_bound: f64 },

    #[error("simulation error at step {step}: {message}")]
    Simulation {
        step: usize,
        message: String,
        partial: Box<crate::simulation::Trajectory>,
    },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("{count} cycles among candidate cells, e.g. {example:?}")]
    Cycles { count: usize, example: Vec<usize> },

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("training diverged at iteration {iteration}")]
    Divergence { iteration: usize, history: Vec<f64> },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
