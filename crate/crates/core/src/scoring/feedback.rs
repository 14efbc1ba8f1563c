use std::fmt;

use serde::{Deserialize, Serialize};

use super::FidelityScore;
use crate::diff::{Discrepancy, DiscrepancyClass, Field, RunReport, Value};
use crate::isa::{decode, disassemble_word, DecodedInstr, DpOp, Flag, Op, ProgramId, TraceEvent};
use crate::SCHEMA_VERSION;

/// Entries beyond this many are summarized by [`FeedbackReport::omitted`].
pub const DEFAULT_FEEDBACK_CAP: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub seq: u64,
    pub pc: u32,
    pub instr_word: u32,
    pub disassembly: String,
    pub field: Field,
    pub class: DiscrepancyClass,
    pub expected: Value,
    pub actual: Value,
    /// What the reference computed, e.g. "results in -10".
    pub result: Option<String>,
    pub expected_behavior: String,
    pub observed_behavior: String,
    pub suspected_area: String,
    /// The full sentence form of the entry.
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackReport {
    pub schema_version: u32,
    pub program: ProgramId,
    pub summary: String,
    pub entries: Vec<FeedbackEntry>,
    /// Discrepancies not rendered because of the cap.
    pub omitted: usize,
    pub score: Option<FidelityScore>,
}

impl FeedbackReport {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("feedback serializes")
    }
}

impl fmt::Display for FeedbackReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}: {}", self.program.name, self.summary)?;
        for e in &self.entries {
            writeln!(f, "  [seq {}] {}", e.seq, e.message)?;
        }
        if self.omitted > 0 {
            writeln!(f, "  ... {} more discrepancies omitted", self.omitted)?;
        }
        Ok(())
    }
}

fn bit_word(b: bool) -> &'static str {
    if b {
        "set"
    } else {
        "clear"
    }
}

fn flag_reason(flag: Flag, expected: bool, op: DpOp, result: u32) -> Option<&'static str> {
    Some(match (flag, expected) {
        (Flag::N, true) => "Since the result is negative, ",
        (Flag::N, false) => "Since the result is not negative, ",
        (Flag::Z, true) => "Since the result is zero, ",
        (Flag::Z, false) if result != 0 => "Since the result is not zero, ",
        (Flag::C, true) if op.is_subtraction() => "Since the subtraction does not borrow, ",
        (Flag::C, false) if op.is_subtraction() => "Since the subtraction borrows, ",
        (Flag::C, true) if op.is_arithmetic() => "Since the addition carries out, ",
        (Flag::C, false) if op.is_arithmetic() => "Since the addition does not carry out, ",
        (Flag::V, true) if op.is_arithmetic() => "Since the signed result overflows, ",
        (Flag::V, false) if op.is_arithmetic() => "Since the signed result does not overflow, ",
        _ => return None,
    })
}

fn result_text(op: DpOp, result: u32) -> String {
    if op.is_arithmetic() {
        format!("results in {}", result as i32)
    } else {
        format!("results in {result:#010x}")
    }
}

fn area(d: &Discrepancy, instr: Option<&DecodedInstr>) -> String {
    let Some(instr) = instr else {
        return "instruction decode".into();
    };
    let m = instr.mnemonic();
    match (d.field, instr.op) {
        (Field::Flag(flag), Op::DataProc { set_flags: false, .. }) => {
            format!("flag update gating ({} on {m} without S)", flag.letter())
        }
        (Field::Flag(flag), _) => format!("flag computation ({} on {m})", flag.letter()),
        (Field::Pc, Op::Branch { .. }) => format!("branch target or condition ({m})"),
        (Field::Pc, Op::BranchExchange { .. }) => "branch exchange".into(),
        (Field::Pc, _) => format!("pc advance ({m})"),
        (Field::Reg(n), _) if instr.destination().map(|r| r.index()) != Some(n as usize) => {
            format!("register file state (R{n} not written by {m})")
        }
        (Field::Reg(_), Op::Mem { .. }) => format!("load data path ({m})"),
        (Field::Reg(_), Op::DataProc { .. }) => format!("operand or result computation ({m})"),
        (Field::Reg(_), _) => format!("register write ({m})"),
        (Field::Memory(_), _) => format!("store data path ({m})"),
        (Field::Fault, _) => format!("exception behavior ({m})"),
    }
}

fn fault_text(v: Value) -> String {
    match v {
        Value::Fault(None) => "retire normally".into(),
        Value::Fault(Some(_)) => format!("raise {v}"),
        other => other.to_string(),
    }
}

/// One entry per discrepancy, using the reference trace for context.
fn render_entry(d: &Discrepancy, event: Option<&TraceEvent>) -> FeedbackEntry {
    let instr = decode(d.instr_word).ok();
    let disassembly = event
        .map(|e| e.disasm.clone())
        .unwrap_or_else(|| disassemble_word(d.instr_word, d.pc));
    let alu = event.and_then(|e| e.alu);
    let dp = match instr.map(|i| i.op) {
        Some(Op::DataProc { op, set_flags, .. }) => Some((op, set_flags)),
        _ => None,
    };
    let executed = event.map(|e| e.executed).unwrap_or(true);
    let result = match (dp, alu) {
        (Some((op, _)), Some(a)) => Some(result_text(op, a.result)),
        _ => None,
    };

    let (expected_behavior, observed_behavior) = match (d.field, d.expected, d.actual) {
        (Field::Flag(flag), Value::Bit(e), Value::Bit(a)) => {
            let l = flag.letter();
            let should = format!("the {l} flag should be {} ({l}={})", bit_word(e), e as u8);
            let reason = match (dp, alu) {
                _ if !executed => "Since the condition fails, ".to_string(),
                (Some((_, false)), _) => format!("Since {disassembly} does not set flags, "),
                (Some((op, true)), Some(alu)) => {
                    flag_reason(flag, e, op, alu.result).unwrap_or("").to_string()
                }
                _ => String::new(),
            };
            let sentence = if reason.is_empty() {
                let mut s = should;
                s[..1].make_ascii_uppercase();
                format!("{s}.")
            } else {
                format!("{reason}{should}.")
            };
            (sentence, format!("The simulation left it at {}.", a as u8))
        }
        (Field::Reg(n), e, a) => (
            format!("R{n} should hold {e}."),
            format!("The simulation produced {a}."),
        ),
        (Field::Pc, e, a) => (
            format!("The next pc should be {e}."),
            format!("The simulation moved to {a}."),
        ),
        (Field::Memory(addr), e, a) => (
            format!("Memory at {addr:#010x} should hold {e}."),
            format!("The simulation stored {a}."),
        ),
        (Field::Fault, e, a) => (
            format!("The instruction should {}.", fault_text(e)),
            match a {
                Value::Fault(None) => "The simulation retired it normally.".to_string(),
                other => format!("The simulation raised {other}."),
            },
        ),
        (field, e, a) => (
            format!("{field} should be {e}."),
            format!("The simulation produced {a}."),
        ),
    };
    let lead = match &result {
        Some(r) if executed => format!("{disassembly} {r}."),
        _ => format!("After {disassembly}:"),
    };
    let message = format!("{lead} {expected_behavior} {observed_behavior}");
    FeedbackEntry {
        seq: d.seq,
        pc: d.pc,
        instr_word: d.instr_word,
        disassembly,
        field: d.field,
        class: d.class,
        expected: d.expected,
        actual: d.actual,
        result,
        expected_behavior,
        observed_behavior,
        suspected_area: area(d, instr.as_ref()),
        message,
    }
}

/// Renders every discrepancy of `report`, capped at `cap` entries.
pub fn render_feedback_capped(report: &RunReport, cap: usize) -> FeedbackReport {
    let event_at = |seq: u64| {
        report
            .reference_trace
            .binary_search_by_key(&seq, |e| e.seq)
            .ok()
            .map(|i| &report.reference_trace[i])
    };
    let entries: Vec<FeedbackEntry> = report
        .discrepancies
        .iter()
        .take(cap)
        .map(|d| render_entry(d, event_at(d.seq)))
        .collect();
    let omitted = report.discrepancies.len() - entries.len();
    let summary = match report.first_discrepancy() {
        None => format!("no divergence in {} steps", report.steps),
        Some(first) => format!(
            "{} discrepancies in {} steps, first at seq {} ({})",
            report.discrepancies.len(),
            report.steps,
            first.seq,
            first.class
        ),
    };
    FeedbackReport {
        schema_version: SCHEMA_VERSION,
        program: report.program.clone(),
        summary,
        entries,
        omitted,
        score: None,
    }
}

pub fn render_feedback(report: &RunReport) -> FeedbackReport {
    render_feedback_capped(report, DEFAULT_FEEDBACK_CAP)
}
