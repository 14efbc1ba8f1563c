use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    compare_states, trace_delta, Discrepancy, Field, FieldMask, RunMode, RunReport, StepContext,
    StepStatus, StopReason, Target, TargetError, Value,
};
use crate::candidate::{CandidateConfig, CandidateModel};
use crate::isa::{
    decode, disassemble_word, observe_alu, ArchState, FaultKind, MemWrite, Program, RegWrite,
    TraceEvent, PC,
};
use crate::SCHEMA_VERSION;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Reference,
    Candidate,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Reference => "reference",
            Side::Candidate => "candidate",
        })
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("entry states differ ({} fields)", .0.len())]
    SetupMismatch(Vec<Discrepancy>),
    #[error("{side}{}: {source}", seq.map(|s| format!(" at seq {s}")).unwrap_or_default())]
    Target {
        side: Side,
        seq: Option<u64>,
        #[source]
        source: TargetError,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub budget: u64,
    pub mode: RunMode,
    pub mask: FieldMask,
}

impl RunOptions {
    pub fn new(budget: u64, mode: RunMode) -> Self {
        RunOptions {
            budget,
            mode,
            mask: FieldMask::ALL,
        }
    }
}

/// Interposes on a run, e.g. to inject faults. Both callbacks see one side
/// at a time, while it is stopped, and return the memory words they wrote
/// (or `None` if they changed nothing).
pub trait StepHook {
    fn before_step(
        &mut self,
        _seq: u64,
        _side: Side,
        _target: &mut dyn Target,
    ) -> Result<Option<Vec<u32>>, TargetError> {
        Ok(None)
    }

    fn after_step(
        &mut self,
        _seq: u64,
        _side: Side,
        _target: &mut dyn Target,
    ) -> Result<Option<Vec<u32>>, TargetError> {
        Ok(None)
    }
}

pub struct NoHook;

impl StepHook for NoHook {}

/// Lockstep run of a candidate model against a reference.
pub fn lockstep_run(
    reference: &mut dyn Target,
    candidate: &mut CandidateModel,
    program: &Program,
    options: &RunOptions,
) -> Result<RunReport, EngineError> {
    let config = candidate.config().clone();
    lockstep_run_with(reference, candidate, &config, program, options, &mut NoHook)
}

struct SideRun<'a> {
    side: Side,
    target: &'a mut dyn Target,
    state: ArchState,
    trace: Vec<TraceEvent>,
    /// Last known value of every word in the run's write set.
    memory: BTreeMap<u32, u32>,
}

impl SideRun<'_> {
    fn err(&self, seq: Option<u64>) -> impl FnOnce(TargetError) -> EngineError {
        let side = self.side;
        move |source| EngineError::Target { side, seq, source }
    }

    fn refresh_state(&mut self, seq: Option<u64>) -> Result<(), EngineError> {
        self.state = self.target.read_state().map_err(self.err(seq))?;
        Ok(())
    }

    fn refresh_word(&mut self, addr: u32, seq: u64) -> Result<u32, EngineError> {
        let v = self.target.read_word(addr).map_err(self.err(Some(seq)))?;
        self.memory.insert(addr, v);
        Ok(v)
    }

    /// Instruction word at the pc, or `None` if the pc is not readable.
    fn fetch(&mut self, seq: u64) -> Result<Option<u32>, EngineError> {
        match self.target.read_word(self.state.pc()) {
            Ok(w) => Ok(Some(w)),
            Err(e) if e.is_access_error() => Ok(None),
            Err(e) => Err(self.err(Some(seq))(e)),
        }
    }

    fn hook_result(
        &mut self,
        seq: u64,
        touched: Option<Vec<u32>>,
        write_set: &mut BTreeSet<u32>,
    ) -> Result<bool, EngineError> {
        let Some(addrs) = touched else {
            return Ok(false);
        };
        self.refresh_state(Some(seq))?;
        write_set.extend(addrs.iter().copied());
        Ok(true)
    }
}

fn build_event(
    seq: u64,
    pre: &ArchState,
    post: &ArchState,
    word: Option<u32>,
    executed: bool,
    cycles: u64,
    mem_writes: Vec<MemWrite>,
) -> TraceEvent {
    let reg_writes = (0..PC)
        .filter(|&r| pre.regs[r] != post.regs[r])
        .map(|r| RegWrite {
            reg: r as u8,
            value: post.regs[r],
        })
        .collect();
    let alu = match word {
        Some(w) if executed => decode(w).ok().and_then(|i| observe_alu(&i, pre)),
        _ => None,
    };
    TraceEvent {
        seq,
        pc: pre.pc(),
        next_pc: post.pc(),
        instr_word: word.unwrap_or(0),
        disasm: match word {
            Some(w) => disassemble_word(w, pre.pc()),
            None => "<unreadable>".to_string(),
        },
        executed,
        reg_writes,
        mem_writes,
        flags: post.flags,
        cycles,
        alu,
    }
}

/// Lockstep run over arbitrary targets with an optional hook.
///
/// Both sides are loaded with `program` and must agree on the entry pc and
/// flags. Each step: step the reference and read its state, step the
/// candidate and read its state, compare. Memory is compared over every
/// word either side has stored to so far.
pub fn lockstep_run_with(
    reference: &mut dyn Target,
    candidate: &mut dyn Target,
    candidate_config: &CandidateConfig,
    program: &Program,
    options: &RunOptions,
    hook: &mut dyn StepHook,
) -> Result<RunReport, EngineError> {
    let mut sides = [
        SideRun {
            side: Side::Reference,
            target: reference,
            state: ArchState::default(),
            trace: Vec::new(),
            memory: BTreeMap::new(),
        },
        SideRun {
            side: Side::Candidate,
            target: candidate,
            state: ArchState::default(),
            trace: Vec::new(),
            memory: BTreeMap::new(),
        },
    ];
    for s in sides.iter_mut() {
        s.target.load(program).map_err(s.err(None))?;
        s.refresh_state(None)?;
    }
    let setup_ctx = StepContext {
        seq: 0,
        pc: program.entry,
        instr_word: 0,
    };
    let mut setup_mask = FieldMask::SETUP;
    setup_mask.flags &= options.mask.flags;
    setup_mask.pc &= options.mask.pc;
    let setup = compare_states(&sides[0].state, &sides[1].state, &setup_mask, &setup_ctx);
    if !setup.is_empty() {
        return Err(EngineError::SetupMismatch(setup));
    }

    let mut write_set: BTreeSet<u32> = BTreeSet::new();
    let mut discrepancies = Vec::new();
    let mut seq = 0u64;
    let stop = loop {
        if sides[0].state.pc() == program.exit {
            break StopReason::Completed;
        }
        if seq >= options.budget {
            break StopReason::BudgetExhausted;
        }

        let mut injected = false;
        for s in sides.iter_mut() {
            let touched = hook
                .before_step(seq, s.side, &mut *s.target)
                .map_err(s.err(Some(seq)))?;
            injected |= s.hook_result(seq, touched, &mut write_set)?;
        }

        let mut words = [None, None];
        let mut pre = [ArchState::default(); 2];
        let mut status = Vec::with_capacity(2);
        for (i, s) in sides.iter_mut().enumerate() {
            words[i] = s.fetch(seq)?;
            pre[i] = s.state;
            let st = s.target.step().map_err(s.err(Some(seq)))?;
            if matches!(st, StepStatus::Completed { .. }) {
                let touched = hook
                    .after_step(seq, s.side, &mut *s.target)
                    .map_err(s.err(Some(seq)))?;
                s.hook_result(seq, touched, &mut write_set)?;
            }
            s.refresh_state(Some(seq))?;
            if let StepStatus::Completed { mem_writes, .. } = &st {
                write_set.extend(mem_writes.iter().copied());
            }
            status.push(st);
        }

        // Bring both sides' view of the write set up to date: new addresses
        // are read on both sides, stored-to addresses on the side that
        // stored, and everything after an injection.
        let mut step_writes: [Vec<MemWrite>; 2] = [Vec::new(), Vec::new()];
        for (i, s) in sides.iter_mut().enumerate() {
            let own: BTreeSet<u32> = match &status[i] {
                StepStatus::Completed { mem_writes, .. } => mem_writes.iter().copied().collect(),
                StepStatus::Faulted(_) => BTreeSet::new(),
            };
            for &addr in &write_set {
                if injected || own.contains(&addr) || !s.memory.contains_key(&addr) {
                    s.refresh_word(addr, seq)?;
                }
            }
            step_writes[i] = own
                .iter()
                .map(|a| MemWrite {
                    addr: *a,
                    value: s.memory[a],
                })
                .collect();
        }

        let ctx = StepContext {
            seq,
            pc: pre[0].pc(),
            instr_word: words[0].unwrap_or(0),
        };
        let mut step_diffs = Vec::new();
        for (i, s) in sides.iter_mut().enumerate() {
            if let StepStatus::Completed {
                cycles, executed, ..
            } = status[i]
            {
                s.trace.push(build_event(
                    seq,
                    &pre[i],
                    &s.state,
                    words[i],
                    executed,
                    cycles,
                    std::mem::take(&mut step_writes[i]),
                ));
            }
        }
        let fault = |st: &StepStatus| match st {
            StepStatus::Faulted(k) => Some(*k),
            StepStatus::Completed { .. } => None,
        };
        let (rf, cf): (Option<FaultKind>, Option<FaultKind>) = (fault(&status[0]), fault(&status[1]));
        step_diffs.extend(compare_states(
            &sides[0].state,
            &sides[1].state,
            &options.mask,
            &ctx,
        ));
        if options.mask.memory {
            for &addr in &write_set {
                let (e, a) = (sides[0].memory[&addr], sides[1].memory[&addr]);
                if e != a {
                    step_diffs.push(Discrepancy::new(
                        &ctx,
                        Field::Memory(addr),
                        Value::Word(e),
                        Value::Word(a),
                    ));
                }
            }
        }
        if rf != cf {
            step_diffs.push(Discrepancy::new(
                &ctx,
                Field::Fault,
                Value::Fault(rf),
                Value::Fault(cf),
            ));
        }
        let diverged = !step_diffs.is_empty();
        discrepancies.extend(step_diffs);
        seq += 1;

        if rf.is_some() || cf.is_some() {
            break StopReason::Error {
                seq: seq - 1,
                reference: rf,
                candidate: cf,
            };
        }
        if diverged && options.mode == RunMode::FailFast {
            break StopReason::FirstDivergence { seq: seq - 1 };
        }
    };

    discrepancies.sort_by_key(|d| d.key());
    let [r, c] = sides;
    let metrics = trace_delta(&r.trace, &c.trace);
    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        program: program.id(),
        candidate: candidate_config.clone(),
        budget: options.budget,
        mode: options.mode,
        mask: options.mask,
        steps: seq,
        discrepancies,
        reference_trace: r.trace,
        candidate_trace: c.trace,
        stop_reason: stop,
        metrics,
    })
}
