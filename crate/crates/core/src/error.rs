use thiserror::Error;

use crate::mdp::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Declared sizes and tensor shapes disagree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid MDP: {0}")]
    InvalidMdp(ValidationReport),

    /// Some policy can keep the agent out of the terminal state at time T.
    #[error("absorption by the horizon is not guaranteed (worst-case survival probability {probability:e}); apply time_augment first")]
    NotAbsorbing { probability: f64 },

    #[error("non-finite policy parameter at state {state}, action {action}")]
    NonFiniteParams { state: usize, action: usize },

    #[error("non-finite parameters after update at iteration {iteration}")]
    NonFiniteIterate { iteration: usize },

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("discount factor {0} outside [0, 1]")]
    Gamma(f64),

    /// Two routes to the same quantity disagree beyond tolerance.
    #[error("internal consistency failure in {what}: residual {residual:e} > {tolerance:e}")]
    Consistency {
        what: &'static str,
        residual: f64,
        tolerance: f64,
    },

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Sampler(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
