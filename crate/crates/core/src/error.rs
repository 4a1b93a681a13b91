use thiserror::Error;

use crate::model::{Duration, TimePoint};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid reservation Q={budget}, T={period}: need 0 < Q <= T")]
    BadReservation { budget: Duration, period: Duration },
    #[error("invalid task set:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("task-set parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("infeasible generator parameters: {0}")]
    Infeasible(String),
    #[error("bad generator spec: {0}")]
    BadParams(String),
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Carries the trace produced up to the point of failure.
    #[error("invariant violated at t={time}: {message}")]
    Invariant {
        time: TimePoint,
        message: String,
        trace: Box<crate::trace::Trace>,
    },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("traces are not comparable: {0}")]
    Mismatch(String),
}
