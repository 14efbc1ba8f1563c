//! Golden A32 interpreter for the supported instruction subset.
//!
//! All operations are pure functions of their inputs; [`Machine`] is a thin
//! mutable wrapper used by the targets and tests.

mod alu;
pub mod asm;
mod cond;
mod decode;
mod disasm;
mod exec;
mod memory;
mod program;
mod state;

use thiserror::Error;

pub use alu::{alu_flags_add, alu_flags_logical, alu_flags_sub, encode_imm, expand_imm};
pub use cond::{evaluate_condition, Condition};
pub use decode::{decode, encode, DecodedInstr, DpOp, Mnemonic, Op, Operand2};
pub use disasm::{disassemble, disassemble_word};
pub use exec::{
    data_processing, execute, execute_with, observe_alu, reset, step, step_with, AluObservation,
    FaultKind, FlagUpdate, Golden, Machine, MemWrite, RegWrite, Semantics, StepError, StepResult,
    TraceEvent,
};
pub use memory::MemoryImage;
pub use program::{Program, ProgramError, ProgramId};
pub use state::{ArchState, Flag, Flags, Reg, CPSR_MODE_USR, LR, PC};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum IsaError {
    #[error("undefined instruction {0:#010x}")]
    UndefinedInstruction(u32),
    #[error("invalid condition code {0:#x}")]
    InvalidCondition(u8),
    #[error("unaligned word access at {0:#010x}")]
    UnalignedAccess(u32),
    #[error("access outside the memory image at {0:#010x}")]
    OutOfRangeAccess(u32),
    #[error("interworking branch to {0:#010x} is not supported")]
    InterworkingUnsupported(u32),
}
