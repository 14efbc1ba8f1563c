//! The knob-configurable candidate CPU model.
//!
//! The candidate shares the golden decoder and interpreter core; each active
//! [`Knob`] overrides one execute-time hook. With no knobs the candidate is
//! the golden model.

mod config;
mod knobs;
mod model;
mod witness;

use thiserror::Error;

pub use config::CandidateConfig;
pub use knobs::Knob;
pub use model::{power_on_value, CandidateModel, KnobSemantics};
pub use witness::{fig2_program, witness, witness_set};

#[derive(Debug, Error)]
pub enum CandidateError {
    #[error("unknown knob `{0}`")]
    UnknownKnob(String),
    #[error("unsupported config schema_version {0}")]
    SchemaVersion(u32),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("reading {0}: {1}")]
    Io(String, #[source] std::io::Error),
}
