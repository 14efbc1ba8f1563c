//! Lockstep differential execution.
//!
//! [`lockstep_run`] drives a reference [`Target`] and a candidate through the
//! same program one instruction at a time, comparing architectural state
//! after every step. The result is a [`RunReport`] holding ordered
//! [`Discrepancy`] records, both traces and [`TraceDeltaMetrics`].

mod discrepancy;
mod engine;
mod metrics;
mod report;
pub mod target;

pub use discrepancy::{
    compare_states, Discrepancy, DiscrepancyClass, Field, FieldMask, StepContext, Value,
};
pub use engine::{
    lockstep_run, lockstep_run_with, EngineError, NoHook, RunOptions, Side, StepHook,
};
pub use metrics::{trace_delta, TraceDeltaMetrics};
pub use report::{RunMode, RunReport, StopReason};
pub use target::{GoldenTarget, RegisterId, StepStatus, Target, TargetError};
