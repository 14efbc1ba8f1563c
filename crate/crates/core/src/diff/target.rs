//! The state-readable, steppable endpoint contract.
//!
//! The lockstep engine, the fault injector and the RSP stub only talk to
//! [`Target`]. The golden interpreter, the candidate model and the RSP client
//! all implement it, so any of them can stand on either side of a run.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{ArchState, FaultKind, Flags, Golden, IsaError, Machine, Program, Semantics, CPSR_MODE_USR};
use crate::rsp::RspError;

#[derive(Debug, Error)]
pub enum TargetError {
    #[error(transparent)]
    Rsp(#[from] RspError),
    #[error("memory access: {0}")]
    Memory(#[from] IsaError),
    #[error("invalid register number {0}")]
    InvalidRegister(u8),
}

impl TargetError {
    /// True for a refused memory access, as opposed to a broken session.
    pub fn is_access_error(&self) -> bool {
        matches!(self, TargetError::Memory(_) | TargetError::Rsp(RspError::TargetError(_)))
    }
}

/// Register addressed by a write.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegisterId {
    /// R0..R15.
    Core(u8),
    Cpsr,
}

/// Outcome of a single step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepStatus {
    Completed {
        cycles: u64,
        /// Whether the condition passed.
        executed: bool,
        /// Word addresses stored to during the step.
        mem_writes: Vec<u32>,
    },
    /// The step did not retire; state is unchanged.
    Faulted(FaultKind),
}

pub trait Target {
    /// Loads `program` and resets to its entry state.
    fn load(&mut self, program: &Program) -> Result<(), TargetError>;

    fn read_state(&mut self) -> Result<ArchState, TargetError>;

    fn read_memory(&mut self, addr: u32, len: usize) -> Result<Vec<u8>, TargetError>;

    fn write_memory(&mut self, addr: u32, data: &[u8]) -> Result<(), TargetError>;

    /// Writes one register. A `Cpsr` write replaces the flags (bits 31..28).
    fn write_register(&mut self, reg: RegisterId, value: u32) -> Result<(), TargetError>;

    fn step(&mut self) -> Result<StepStatus, TargetError>;

    /// Short human-readable identity used in logs.
    fn describe(&self) -> String;

    fn read_word(&mut self, addr: u32) -> Result<u32, TargetError> {
        let bytes = self.read_memory(addr, 4)?;
        let arr: [u8; 4] = bytes
            .as_slice()
            .try_into()
            .map_err(|_| TargetError::Memory(IsaError::OutOfRangeAccess(addr)))?;
        Ok(u32::from_le_bytes(arr))
    }

    fn write_word(&mut self, addr: u32, value: u32) -> Result<(), TargetError> {
        self.write_memory(addr, &value.to_le_bytes())
    }

    fn write_flags(&mut self, flags: Flags) -> Result<(), TargetError> {
        self.write_register(RegisterId::Cpsr, flags.to_cpsr_bits() | CPSR_MODE_USR)
    }
}

impl<T: Target + ?Sized> Target for Box<T> {
    fn load(&mut self, program: &Program) -> Result<(), TargetError> {
        (**self).load(program)
    }
    fn read_state(&mut self) -> Result<ArchState, TargetError> {
        (**self).read_state()
    }
    fn read_memory(&mut self, addr: u32, len: usize) -> Result<Vec<u8>, TargetError> {
        (**self).read_memory(addr, len)
    }
    fn write_memory(&mut self, addr: u32, data: &[u8]) -> Result<(), TargetError> {
        (**self).write_memory(addr, data)
    }
    fn write_register(&mut self, reg: RegisterId, value: u32) -> Result<(), TargetError> {
        (**self).write_register(reg, value)
    }
    fn step(&mut self) -> Result<StepStatus, TargetError> {
        (**self).step()
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Steps `machine` under `sem` and maps the outcome to a [`StepStatus`].
pub(crate) fn step_machine<S: Semantics + ?Sized>(machine: &mut Machine, sem: &S) -> StepStatus {
    match machine.step_with(sem) {
        Ok(event) => StepStatus::Completed {
            cycles: event.cycles,
            executed: event.executed,
            mem_writes: event.mem_writes.iter().map(|w| w.addr).collect(),
        },
        Err(e) => StepStatus::Faulted(e.kind),
    }
}

pub(crate) fn write_machine_register(
    machine: &mut Machine,
    reg: RegisterId,
    value: u32,
) -> Result<(), TargetError> {
    match reg {
        RegisterId::Core(n) if n < 16 => machine.state.regs[n as usize] = value,
        RegisterId::Core(n) => return Err(TargetError::InvalidRegister(n)),
        RegisterId::Cpsr => machine.state.flags = Flags::from_cpsr(value),
    }
    Ok(())
}

/// The in-process golden interpreter as a target.
#[derive(Clone, Debug, Default)]
pub struct GoldenTarget {
    pub machine: Machine,
}

impl GoldenTarget {
    pub fn new() -> Self {
        GoldenTarget::default()
    }
}

impl Target for GoldenTarget {
    fn load(&mut self, program: &Program) -> Result<(), TargetError> {
        self.machine = Machine::new(program.image.clone(), program.entry);
        Ok(())
    }

    fn read_state(&mut self) -> Result<ArchState, TargetError> {
        Ok(self.machine.state)
    }

    fn read_memory(&mut self, addr: u32, len: usize) -> Result<Vec<u8>, TargetError> {
        Ok(self.machine.mem.read_bytes(addr, len)?.to_vec())
    }

    fn write_memory(&mut self, addr: u32, data: &[u8]) -> Result<(), TargetError> {
        Ok(self.machine.mem.write_bytes(addr, data)?)
    }

    fn write_register(&mut self, reg: RegisterId, value: u32) -> Result<(), TargetError> {
        write_machine_register(&mut self.machine, reg, value)
    }

    fn step(&mut self) -> Result<StepStatus, TargetError> {
        Ok(step_machine(&mut self.machine, &Golden))
    }

    fn describe(&self) -> String {
        "golden".to_string()
    }
}
