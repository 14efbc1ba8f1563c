//! Instruction execution.
//!
//! [`execute_with`] is the single interpreter core. It is parameterised by a
//! [`Semantics`] implementation whose default methods are the architectural
//! behaviour; [`Golden`] uses the defaults unchanged. Candidate models
//! override individual hooks to inject defects without forking the
//! interpreter.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::alu::{alu_flags_add, alu_flags_logical, alu_flags_sub, expand_imm};
use super::decode::{decode, DecodedInstr, DpOp, Op, Operand2};
use super::disasm::disassemble;
use super::{ArchState, Condition, Flags, IsaError, MemoryImage, Reg, LR};

/// Interception points for execute semantics.
pub trait Semantics {
    fn condition_passes(&self, cond: Condition, flags: Flags) -> bool {
        cond.holds(flags)
    }

    fn expand_imm(&self, imm8: u8, rotate: u8, carry_in: bool) -> (u32, bool) {
        expand_imm(imm8, rotate, carry_in)
    }

    /// New flags after a data-processing instruction, or `None` to leave them.
    fn data_processing_flags(&self, update: &FlagUpdate) -> Option<Flags> {
        update.architectural()
    }

    /// PC increment for an instruction that does not branch.
    fn sequential_advance(&self) -> u32 {
        4
    }

    /// Distance from the branch instruction to the base its offset applies to.
    fn branch_base(&self) -> u32 {
        8
    }

    fn load_value(&self, word: u32) -> u32 {
        word
    }

    /// Word actually written to memory (little-endian) for a store of `value`.
    fn store_value(&self, value: u32) -> u32 {
        value
    }
}

/// Architectural semantics.
#[derive(Clone, Copy, Debug, Default)]
pub struct Golden;

impl Semantics for Golden {}

/// Inputs to the flag-update decision of a data-processing instruction.
#[derive(Clone, Copy, Debug)]
pub struct FlagUpdate {
    pub op: DpOp,
    pub set_flags: bool,
    pub result: u32,
    /// Flags the operation produces when it sets flags.
    pub computed: Flags,
    pub prior: Flags,
}

impl FlagUpdate {
    pub fn architectural(&self) -> Option<Flags> {
        self.set_flags.then_some(self.computed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegWrite {
    pub reg: u8,
    pub value: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemWrite {
    pub addr: u32,
    pub value: u32,
}

/// Operands and result of a data-processing instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AluObservation {
    pub lhs: u32,
    pub rhs: u32,
    pub result: u32,
}

impl AluObservation {
    pub fn signed_result(&self) -> i32 {
        self.result as i32
    }
}

/// One executed (or condition-skipped) instruction.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub pc: u32,
    pub next_pc: u32,
    pub instr_word: u32,
    pub disasm: String,
    /// Whether the condition passed.
    pub executed: bool,
    pub reg_writes: Vec<RegWrite>,
    pub mem_writes: Vec<MemWrite>,
    pub flags: Flags,
    pub cycles: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alu: Option<AluObservation>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepResult {
    pub state: ArchState,
    pub event: TraceEvent,
}

impl StepResult {
    /// Commits the memory writes of this step.
    pub fn apply_writes(&self, mem: &mut MemoryImage) -> Result<(), IsaError> {
        for w in &self.event.mem_writes {
            mem.write_word(w.addr, w.value)?;
        }
        Ok(())
    }
}

/// Coarse classification of a failed step, as a debugger would see it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    UndefinedInstruction,
    PrefetchAbort,
    DataAbort,
}

impl FaultKind {
    /// GDB signal number reported in a stop reply.
    pub fn signal(self) -> u8 {
        match self {
            FaultKind::UndefinedInstruction => 4,
            FaultKind::PrefetchAbort => 11,
            FaultKind::DataAbort => 10,
        }
    }

    pub fn from_signal(sig: u8) -> Option<FaultKind> {
        match sig {
            4 => Some(FaultKind::UndefinedInstruction),
            11 => Some(FaultKind::PrefetchAbort),
            10 => Some(FaultKind::DataAbort),
            _ => None,
        }
    }
}

/// A step that could not complete, tagged with the faulting pc.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("pc {pc:#010x}: {source}")]
pub struct StepError {
    pub pc: u32,
    pub kind: FaultKind,
    pub source: IsaError,
}

/// Result and flags of a data-processing operation, computed as if S were set.
pub fn data_processing(op: DpOp, a: u32, b: u32, shifter_carry: bool, prior: Flags) -> (u32, Flags) {
    match op {
        DpOp::And | DpOp::Tst => {
            let r = a & b;
            (r, alu_flags_logical(r, shifter_carry, prior))
        }
        DpOp::Eor | DpOp::Teq => {
            let r = a ^ b;
            (r, alu_flags_logical(r, shifter_carry, prior))
        }
        DpOp::Orr => {
            let r = a | b;
            (r, alu_flags_logical(r, shifter_carry, prior))
        }
        DpOp::Mov => (b, alu_flags_logical(b, shifter_carry, prior)),
        DpOp::Mvn => (!b, alu_flags_logical(!b, shifter_carry, prior)),
        DpOp::Sub | DpOp::Cmp => (a.wrapping_sub(b), alu_flags_sub(a, b)),
        DpOp::Rsb => (b.wrapping_sub(a), alu_flags_sub(b, a)),
        DpOp::Add | DpOp::Cmn => (a.wrapping_add(b), alu_flags_add(a, b)),
    }
}

fn operands<S: Semantics + ?Sized>(
    sem: &S,
    state: &ArchState,
    op: DpOp,
    rn: Reg,
    operand2: Operand2,
) -> (u32, u32, bool) {
    let (b, carry) = match operand2 {
        Operand2::Imm { imm8, rotate } => sem.expand_imm(imm8, rotate, state.flags.c),
        Operand2::Reg(rm) => (state.operand(rm), state.flags.c),
    };
    let a = if op.is_move() { 0 } else { state.operand(rn) };
    (a, b, carry)
}

/// Operands and result a data-processing instruction would produce from
/// `state` under architectural semantics, ignoring its condition.
pub fn observe_alu(instr: &DecodedInstr, state: &ArchState) -> Option<AluObservation> {
    match instr.op {
        Op::DataProc { op, rn, operand2, .. } => {
            let (lhs, rhs, carry) = operands(&Golden, state, op, rn, operand2);
            let (result, _) = data_processing(op, lhs, rhs, carry, state.flags);
            Some(AluObservation { lhs, rhs, result })
        }
        _ => None,
    }
}

/// Executes `instr` against `state` and `mem` under `sem`.
///
/// Pure: memory writes are reported in the event, not applied.
pub fn execute_with<S: Semantics + ?Sized>(
    sem: &S,
    state: &ArchState,
    mem: &MemoryImage,
    instr: &DecodedInstr,
) -> Result<StepResult, IsaError> {
    let pc = state.pc();
    let mut next = *state;
    next.cycle_count += 1;
    let sequential = pc.wrapping_add(sem.sequential_advance());
    let mut reg_writes = Vec::new();
    let mut mem_writes = Vec::new();
    let mut alu = None;

    let executed = sem.condition_passes(instr.cond, state.flags);
    if !executed {
        next.set_pc(sequential);
    } else {
        match instr.op {
            Op::DataProc {
                op,
                set_flags,
                rd,
                rn,
                operand2,
            } => {
                let (a, b, carry) = operands(sem, state, op, rn, operand2);
                let (result, computed) = data_processing(op, a, b, carry, state.flags);
                if !op.is_compare() {
                    next.regs[rd.index()] = result;
                    reg_writes.push(RegWrite {
                        reg: rd.number(),
                        value: result,
                    });
                }
                let update = FlagUpdate {
                    op,
                    set_flags,
                    result,
                    computed,
                    prior: state.flags,
                };
                if let Some(flags) = sem.data_processing_flags(&update) {
                    next.flags = flags;
                }
                alu = Some(AluObservation {
                    lhs: a,
                    rhs: b,
                    result,
                });
                next.set_pc(sequential);
            }
            Op::Branch { link, offset } => {
                if link {
                    let ret = pc.wrapping_add(4);
                    next.regs[LR] = ret;
                    reg_writes.push(RegWrite {
                        reg: LR as u8,
                        value: ret,
                    });
                }
                next.set_pc(
                    pc.wrapping_add(sem.branch_base())
                        .wrapping_add(offset as u32),
                );
            }
            Op::BranchExchange { rm } => {
                let target = state.operand(rm);
                if target & 1 != 0 {
                    return Err(IsaError::InterworkingUnsupported(target));
                }
                next.set_pc(target);
            }
            Op::Mem {
                load,
                rd,
                rn,
                add,
                offset,
            } => {
                let base = state.operand(rn);
                let addr = if add {
                    base.wrapping_add(offset as u32)
                } else {
                    base.wrapping_sub(offset as u32)
                };
                if load {
                    let value = sem.load_value(mem.read_word(addr)?);
                    next.regs[rd.index()] = value;
                    reg_writes.push(RegWrite {
                        reg: rd.number(),
                        value,
                    });
                } else {
                    mem.check_word(addr)?;
                    mem_writes.push(MemWrite {
                        addr,
                        value: sem.store_value(state.operand(rd)),
                    });
                }
                next.set_pc(sequential);
            }
        }
    }

    let event = TraceEvent {
        seq: state.cycle_count,
        pc,
        next_pc: next.pc(),
        instr_word: instr.raw_word,
        disasm: disassemble(instr, pc),
        executed,
        reg_writes,
        mem_writes,
        flags: next.flags,
        cycles: next.cycle_count - state.cycle_count,
        alu,
    };
    Ok(StepResult { state: next, event })
}

/// Executes under architectural semantics.
pub fn execute(
    state: &ArchState,
    mem: &MemoryImage,
    instr: &DecodedInstr,
) -> Result<StepResult, IsaError> {
    execute_with(&Golden, state, mem, instr)
}

/// Fetch, decode and execute one instruction under `sem`.
pub fn step_with<S: Semantics + ?Sized>(
    sem: &S,
    state: &ArchState,
    mem: &MemoryImage,
) -> Result<StepResult, StepError> {
    let pc = state.pc();
    let word = mem.read_word(pc).map_err(|source| StepError {
        pc,
        kind: FaultKind::PrefetchAbort,
        source,
    })?;
    let instr = decode(word).map_err(|source| StepError {
        pc,
        kind: FaultKind::UndefinedInstruction,
        source,
    })?;
    execute_with(sem, state, mem, &instr).map_err(|source| {
        let kind = match source {
            IsaError::InterworkingUnsupported(_) => FaultKind::UndefinedInstruction,
            _ => FaultKind::DataAbort,
        };
        StepError { pc, kind, source }
    })
}

/// Fetch, decode and execute one instruction.
pub fn step(state: &ArchState, mem: &MemoryImage) -> Result<StepResult, StepError> {
    step_with(&Golden, state, mem)
}

/// Cold state: registers zero, flags clear, no cycles elapsed.
pub fn reset() -> ArchState {
    ArchState::default()
}

/// State plus memory, stepped in place.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Machine {
    pub state: ArchState,
    pub mem: MemoryImage,
}

impl Machine {
    pub fn new(mem: MemoryImage, entry: u32) -> Self {
        let mut state = reset();
        state.set_pc(entry);
        Machine { state, mem }
    }

    pub fn step_with<S: Semantics + ?Sized>(&mut self, sem: &S) -> Result<TraceEvent, StepError> {
        let result = step_with(sem, &self.state, &self.mem)?;
        // Writes were range-checked during execute.
        result
            .apply_writes(&mut self.mem)
            .expect("store validated during execute");
        self.state = result.state;
        Ok(result.event)
    }

    pub fn step(&mut self) -> Result<TraceEvent, StepError> {
        self.step_with(&Golden)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG2: [u32; 3] = [0xE3A0_000A, 0xE3A0_1014, 0xE150_0001];

    #[test]
    fn mov_after_reset() {
        let mem = MemoryImage::from_words(0, &[0xE3A0_000A]);
        let r = step(&reset(), &mem).unwrap();
        assert_eq!(r.state.regs[0], 10);
        assert_eq!(r.state.pc(), 4);
        assert_eq!(r.state.flags, Flags::default());
        assert_eq!(r.event.reg_writes, vec![RegWrite { reg: 0, value: 10 }]);
        assert_eq!(r.event.cycles, 1);
    }

    #[test]
    fn cmp_sets_negative() {
        let mut s = reset();
        s.regs[0] = 10;
        s.regs[1] = 20;
        let mem = MemoryImage::default();
        let r = execute(&s, &mem, &decode(0xE150_0001).unwrap()).unwrap();
        assert_eq!(r.state.regs[..15], s.regs[..15]);
        assert!(r.state.flags.n);
        assert!(!r.state.flags.z);
        assert_eq!(r.event.alu.unwrap().signed_result(), -10);
    }

    #[test]
    fn branch_zero_offset_targets_pc_plus_8() {
        let mut s = reset();
        s.set_pc(0x20);
        let r = execute(&s, &MemoryImage::default(), &decode(0xEA00_0000).unwrap()).unwrap();
        assert_eq!(r.state.pc(), 0x28);
    }

    #[test]
    fn bl_sets_link_register() {
        let mut s = reset();
        s.set_pc(0x20);
        let r = execute(&s, &MemoryImage::default(), &decode(0xEB00_0001).unwrap()).unwrap();
        assert_eq!(r.state.pc(), 0x2C);
        assert_eq!(r.state.regs[LR], 0x24);
    }

    #[test]
    fn pc_operand_reads_plus_8() {
        // add r0, pc, #0
        let mut s = reset();
        s.set_pc(0x40);
        let r = execute(&s, &MemoryImage::default(), &decode(0xE28F_0000).unwrap()).unwrap();
        assert_eq!(r.state.regs[0], 0x48);
    }

    #[test]
    fn failed_condition_only_advances() {
        let s = reset();
        // moveq r0, #10 with Z clear
        let r = execute(&s, &MemoryImage::default(), &decode(0x03A0_000A).unwrap()).unwrap();
        assert!(!r.event.executed);
        assert_eq!(r.state.regs[..15], s.regs[..15]);
        assert_eq!(r.state.flags, s.flags);
        assert_eq!(r.state.pc(), 4);
        assert_eq!(r.state.cycle_count, 1);
    }

    #[test]
    fn logical_s_with_rotation_sets_carry() {
        // movs r0, #0x80000000
        let r = execute(&reset(), &MemoryImage::default(), &decode(0xE3B0_0102).unwrap()).unwrap();
        assert_eq!(r.state.regs[0], 0x8000_0000);
        assert!(r.state.flags.n && r.state.flags.c && !r.state.flags.z);
        // movs r0, #1 leaves C as it was
        let mut s = reset();
        s.flags.c = true;
        let r = execute(&s, &MemoryImage::default(), &decode(0xE3B0_0001).unwrap()).unwrap();
        assert!(r.state.flags.c);
    }

    #[test]
    fn loads_stores_and_faults() {
        let mut m = Machine::new(MemoryImage::zeroed(0, 32), 0);
        m.mem.write_word(0, 0xE3A0_00FF).unwrap(); // mov r0, #255
        m.mem.write_word(4, 0xE58F_0008).unwrap(); // str r0, [pc, #8] -> 0x14
        m.mem.write_word(8, 0xE59F_1004).unwrap(); // ldr r1, [pc, #4] -> 0x14
        m.mem.write_word(12, 0xE591_2002).unwrap(); // ldr r2, [r1, #2] unaligned
        m.step().unwrap();
        let ev = m.step().unwrap();
        assert_eq!(ev.mem_writes, vec![MemWrite { addr: 0x14, value: 0xFF }]);
        assert_eq!(m.mem.read_word(0x14).unwrap(), 0xFF);
        m.step().unwrap();
        assert_eq!(m.state.regs[1], 0xFF);
        let err = m.step().unwrap_err();
        assert_eq!(err.kind, FaultKind::DataAbort);
        assert_eq!(err.source, IsaError::UnalignedAccess(0x101));
        assert_eq!(err.pc, 12);
    }

    #[test]
    fn empty_memory_is_out_of_range() {
        let err = step(&reset(), &MemoryImage::default()).unwrap_err();
        assert_eq!(err.source, IsaError::OutOfRangeAccess(0));
        assert_eq!(err.kind, FaultKind::PrefetchAbort);
    }

    #[test]
    fn fig2_program_runs_to_completion() {
        let mut m = Machine::new(MemoryImage::from_words(0, &FIG2), 0);
        let first = m.step().unwrap();
        assert_eq!(first.disasm, "MOV R0, #10");
        m.step().unwrap();
        m.step().unwrap();
        assert_eq!(m.state.regs[0], 10);
        assert_eq!(m.state.regs[1], 20);
        assert!(m.state.flags.n);
        assert_eq!(m.state.pc(), 12);
    }

    #[test]
    fn reset_is_cold() {
        let s = reset();
        assert!(s.regs.iter().all(|&r| r == 0));
        assert_eq!(s.flags, Flags::new(false, false, false, false));
        assert_eq!(s.cycle_count, 0);
    }
}
