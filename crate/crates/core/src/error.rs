use thiserror::Error;

use crate::simulation::Trace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input outside the domain of a map (non-finite values, `v3 <= -g`, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Constraint or scenario parameters violate their invariants.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("synthesis infeasible: {0}")]
    Synthesis(String),

    #[error("malformed certificate: {0}")]
    Certificate(String),

    /// The closed loop hit a domain error. The trace up to the failing step is kept.
    #[error("simulation aborted at step {step}: {reason}")]
    SimulationAborted {
        step: usize,
        reason: String,
        trace: Box<Trace>,
    },
}
