//! Differential conformance harness for an A32 instruction subset.
//!
//! A candidate CPU model runs in lockstep with a reference (the in-process
//! golden interpreter or any GDB remote-protocol endpoint). Architectural
//! state is compared after every instruction, divergences are scored and
//! turned into repair feedback, and a repair loop revises the candidate until
//! it matches the reference.
//!
//! Module map:
//!
//! * [`isa`] golden decoder and interpreter
//! * [`candidate`] knob-configurable candidate model
//! * [`rsp`] GDB remote serial protocol codec, client and stub server
//! * [`diff`] lockstep runner, comparisons, trace metrics and reports
//! * [`scoring`] fidelity score, feedback rendering and the repair loop
//! * [`fault`] fault-injection campaigns
//! * [`gen`] seeded random program generator

pub mod candidate;
pub mod diff;
pub mod fault;
pub mod gen;
pub mod isa;
pub mod rsp;
pub mod scoring;

/// Version stamped into every serialized document.
pub const SCHEMA_VERSION: u32 = 1;
