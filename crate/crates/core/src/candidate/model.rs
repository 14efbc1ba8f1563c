use crate::diff::target::{step_machine, write_machine_register};
use crate::diff::{RegisterId, StepStatus, Target, TargetError};
use crate::isa::{
    self, expand_imm, ArchState, Condition, FlagUpdate, Flags, Machine, MemoryImage, Program,
    Semantics, StepError, TraceEvent, PC,
};

use super::{CandidateConfig, Knob};

/// Register contents a fresh candidate powers up with. Only observable when
/// reset does not clear the register file.
pub fn power_on_value(reg: usize) -> u32 {
    0xA5A5_A500 | reg as u32
}

/// Golden semantics modified pointwise by a knob set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct KnobSemantics {
    mask: u16,
}

impl KnobSemantics {
    pub fn new(config: &CandidateConfig) -> Self {
        let mask = config
            .active
            .iter()
            .fold(0u16, |m, k| m | 1 << k.index());
        KnobSemantics { mask }
    }

    pub fn has(&self, knob: Knob) -> bool {
        self.mask & (1 << knob.index()) != 0
    }
}

impl Semantics for KnobSemantics {
    fn condition_passes(&self, cond: Condition, flags: Flags) -> bool {
        let cond = match cond {
            Condition::Eq if self.has(Knob::CondEqNeSwapped) => Condition::Ne,
            Condition::Ne if self.has(Knob::CondEqNeSwapped) => Condition::Eq,
            c => c,
        };
        cond.holds(flags)
    }

    fn expand_imm(&self, imm8: u8, rotate: u8, carry_in: bool) -> (u32, bool) {
        if self.has(Knob::ImmRotateIgnored) {
            (imm8 as u32, carry_in)
        } else {
            expand_imm(imm8, rotate, carry_in)
        }
    }

    fn data_processing_flags(&self, update: &FlagUpdate) -> Option<Flags> {
        if !update.set_flags {
            return self
                .has(Knob::FlagsUpdatedOnNonSOps)
                .then_some(update.computed);
        }
        let mut f = update.computed;
        let op = update.op;
        if self.has(Knob::CmpSkipsNUpdate) && Knob::CmpSkipsNUpdate.touches_flags_of(op) {
            f.n = update.prior.n;
        }
        if self.has(Knob::CarryInverted) && Knob::CarryInverted.touches_flags_of(op) {
            f.c = !f.c;
        }
        if self.has(Knob::OverflowAlwaysClear) && Knob::OverflowAlwaysClear.touches_flags_of(op) {
            f.v = false;
        }
        if self.has(Knob::ZFromLowByteOnly) {
            f.z = update.result & 0xFF == 0;
        }
        Some(f)
    }

    fn sequential_advance(&self) -> u32 {
        if self.has(Knob::PcStep8) {
            8
        } else {
            4
        }
    }

    fn branch_base(&self) -> u32 {
        if self.has(Knob::BranchOffsetOffBy4) {
            4
        } else {
            8
        }
    }

    fn load_value(&self, word: u32) -> u32 {
        if self.has(Knob::LdrSignExtendsHalfword) {
            word as u16 as i16 as i32 as u32
        } else {
            word
        }
    }

    fn store_value(&self, value: u32) -> u32 {
        if self.has(Knob::StrWritesBigEndian) {
            value.swap_bytes()
        } else {
            value
        }
    }
}

/// A steppable candidate machine: the shared interpreter under
/// [`KnobSemantics`].
#[derive(Clone, Debug)]
pub struct CandidateModel {
    config: CandidateConfig,
    sem: KnobSemantics,
    machine: Machine,
}

impl CandidateModel {
    /// Builds a model in its reset state with no memory mapped.
    pub fn instantiate(config: &CandidateConfig) -> Self {
        let mut machine = Machine::default();
        if config.is_active(Knob::ResetSkipsRegfile) {
            for (i, r) in machine.state.regs.iter_mut().enumerate().take(PC) {
                *r = power_on_value(i);
            }
        }
        let mut model = CandidateModel {
            config: config.clone(),
            sem: KnobSemantics::new(config),
            machine,
        };
        model.reset();
        model
    }

    pub fn config(&self) -> &CandidateConfig {
        &self.config
    }

    pub fn state(&self) -> &ArchState {
        &self.machine.state
    }

    pub fn memory(&self) -> &MemoryImage {
        &self.machine.mem
    }

    /// Resets the core. With `reset_skips_regfile` the general registers
    /// keep whatever they held.
    pub fn reset(&mut self) {
        let regs = self.machine.state.regs;
        self.machine.state = isa::reset();
        if self.sem.has(Knob::ResetSkipsRegfile) {
            self.machine.state.regs[..PC].copy_from_slice(&regs[..PC]);
        }
    }

    /// One fetch-decode-execute step.
    pub fn step(&mut self) -> Result<TraceEvent, StepError> {
        self.machine.step_with(&self.sem)
    }

    pub fn poke_register(&mut self, reg: RegisterId, value: u32) -> Result<(), TargetError> {
        write_machine_register(&mut self.machine, reg, value)
    }

    pub fn poke_memory(&mut self, addr: u32, data: &[u8]) -> Result<(), TargetError> {
        Ok(self.machine.mem.write_bytes(addr, data)?)
    }
}

impl Target for CandidateModel {
    fn load(&mut self, program: &Program) -> Result<(), TargetError> {
        self.reset();
        self.machine.mem = program.image.clone();
        self.machine.state.set_pc(program.entry);
        Ok(())
    }

    fn read_state(&mut self) -> Result<ArchState, TargetError> {
        Ok(self.machine.state)
    }

    fn read_memory(&mut self, addr: u32, len: usize) -> Result<Vec<u8>, TargetError> {
        Ok(self.machine.mem.read_bytes(addr, len)?.to_vec())
    }

    fn write_memory(&mut self, addr: u32, data: &[u8]) -> Result<(), TargetError> {
        self.poke_memory(addr, data)
    }

    fn write_register(&mut self, reg: RegisterId, value: u32) -> Result<(), TargetError> {
        self.poke_register(reg, value)
    }

    fn step(&mut self) -> Result<StepStatus, TargetError> {
        Ok(step_machine(&mut self.machine, &self.sem))
    }

    fn describe(&self) -> String {
        format!("candidate {}", self.config)
    }
}
