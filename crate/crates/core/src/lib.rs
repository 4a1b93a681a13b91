//! Simulator for constant-bandwidth servers with capacity sharing and
//! stealing on `m` processors, under global EDF, with deadline-aware work
//! stealing of dynamically spawned parallel jobs.
//!
//! The usual pipeline is [`workload::load_spec`] or [`workload::generate`]
//! to obtain a [`TaskSet`], [`engine::run`] to produce a [`Trace`], and the
//! [`analysis`] checkers and metrics on top of the trace.

pub mod analysis;
pub mod dispatch;
pub mod engine;
pub mod error;
pub mod model;
pub mod server;
pub mod trace;
pub mod workload;

pub use engine::{run, run_jobs, Policy, RunConfig, StealPolicy};
pub use error::{EngineError, ModelError, TraceError, WorkloadError};
pub use model::{Rational, ServerId, TaskSet, TaskSpec, UnitId};
pub use trace::Trace;
