use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::isa::{ArchState, FaultKind, Flag, PC};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscrepancyClass {
    RegisterMismatch,
    FlagMismatch,
    ControlFlowMismatch,
    MemoryMismatch,
    DecodeMismatch,
}

impl DiscrepancyClass {
    pub fn name(self) -> &'static str {
        match self {
            DiscrepancyClass::RegisterMismatch => "register_mismatch",
            DiscrepancyClass::FlagMismatch => "flag_mismatch",
            DiscrepancyClass::ControlFlowMismatch => "control_flow_mismatch",
            DiscrepancyClass::MemoryMismatch => "memory_mismatch",
            DiscrepancyClass::DecodeMismatch => "decode_mismatch",
        }
    }
}

impl fmt::Display for DiscrepancyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A compared field. The derived order is the report order: R0..R14, N, Z,
/// C, V, pc, memory by address, fault.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Field {
    /// General register R0..R14; R15 is reported as [`Field::Pc`].
    Reg(u8),
    Flag(Flag),
    Pc,
    Memory(u32),
    /// Whether (and how) the step faulted.
    Fault,
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Reg(n) => write!(f, "R{n}"),
            Field::Flag(flag) => write!(f, "{}", flag.letter()),
            Field::Pc => f.write_str("pc"),
            Field::Memory(addr) => write!(f, "memory[{addr:#010x}]"),
            Field::Fault => f.write_str("fault"),
        }
    }
}

impl FromStr for Field {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("unknown field {s:?}");
        match s {
            "pc" => return Ok(Field::Pc),
            "fault" => return Ok(Field::Fault),
            _ => {}
        }
        if let Some(n) = s.strip_prefix('R') {
            let n: u8 = n.parse().map_err(|_| bad())?;
            return if (n as usize) < PC { Ok(Field::Reg(n)) } else { Err(bad()) };
        }
        if let Some(addr) = s.strip_prefix("memory[0x").and_then(|r| r.strip_suffix(']')) {
            return u32::from_str_radix(addr, 16).map(Field::Memory).map_err(|_| bad());
        }
        let mut chars = s.chars();
        match (chars.next().and_then(Flag::from_letter), chars.next()) {
            (Some(flag), None) if s.chars().all(|c| c.is_ascii_uppercase()) => Ok(Field::Flag(flag)),
            _ => Err(bad()),
        }
    }
}

impl From<Field> for String {
    fn from(f: Field) -> String {
        f.to_string()
    }
}

impl TryFrom<String> for Field {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// An observed field value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Value {
    Word(u32),
    Bit(bool),
    /// Fault raised by the step, or `None` if it retired normally.
    Fault(Option<FaultKind>),
}

impl Value {
    pub fn fault_name(kind: Option<FaultKind>) -> &'static str {
        match kind {
            None => "none",
            Some(FaultKind::UndefinedInstruction) => "undefined_instruction",
            Some(FaultKind::PrefetchAbort) => "prefetch_abort",
            Some(FaultKind::DataAbort) => "data_abort",
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Word(w) => write!(f, "{w:#010x}"),
            Value::Bit(b) => write!(f, "{}", *b as u8),
            Value::Fault(k) => f.write_str(Value::fault_name(*k)),
        }
    }
}

impl FromStr for Value {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(hex) = s.strip_prefix("0x") {
            return u32::from_str_radix(hex, 16)
                .map(Value::Word)
                .map_err(|e| e.to_string());
        }
        let fault = match s {
            "0" => return Ok(Value::Bit(false)),
            "1" => return Ok(Value::Bit(true)),
            "none" => None,
            "undefined_instruction" => Some(FaultKind::UndefinedInstruction),
            "prefetch_abort" => Some(FaultKind::PrefetchAbort),
            "data_abort" => Some(FaultKind::DataAbort),
            _ => return Err(format!("unknown value {s:?}")),
        };
        Ok(Value::Fault(fault))
    }
}

impl From<Value> for String {
    fn from(v: Value) -> String {
        v.to_string()
    }
}

impl TryFrom<String> for Value {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Where a comparison happened: the step index and the reference's
/// instruction for that step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepContext {
    pub seq: u64,
    pub pc: u32,
    pub instr_word: u32,
}

/// One field that differs between reference and candidate after a step.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Discrepancy {
    pub seq: u64,
    pub pc: u32,
    pub instr_word: u32,
    pub field: Field,
    pub expected: Value,
    pub actual: Value,
    pub class: DiscrepancyClass,
}

impl Discrepancy {
    pub fn new(at: &StepContext, field: Field, expected: Value, actual: Value) -> Self {
        let class = match field {
            Field::Reg(_) => DiscrepancyClass::RegisterMismatch,
            Field::Flag(_) => DiscrepancyClass::FlagMismatch,
            Field::Pc => DiscrepancyClass::ControlFlowMismatch,
            Field::Memory(_) => DiscrepancyClass::MemoryMismatch,
            Field::Fault => fault_class(expected, actual),
        };
        Discrepancy {
            seq: at.seq,
            pc: at.pc,
            instr_word: at.instr_word,
            field,
            expected,
            actual,
            class,
        }
    }

    /// Sort key of the report order.
    pub fn key(&self) -> (u64, Field) {
        (self.seq, self.field)
    }
}

fn fault_class(expected: Value, actual: Value) -> DiscrepancyClass {
    let kinds = [expected, actual].map(|v| match v {
        Value::Fault(k) => k,
        _ => None,
    });
    if kinds.contains(&Some(FaultKind::UndefinedInstruction)) {
        DiscrepancyClass::DecodeMismatch
    } else if kinds.contains(&Some(FaultKind::PrefetchAbort)) {
        DiscrepancyClass::ControlFlowMismatch
    } else {
        DiscrepancyClass::MemoryMismatch
    }
}

/// Which fields a comparison looks at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldMask {
    /// Bit i selects R<i> for i in 0..15.
    pub registers: u16,
    /// Bits 0..4 select N, Z, C, V.
    pub flags: u8,
    pub pc: bool,
    pub memory: bool,
}

impl FieldMask {
    pub const ALL: FieldMask = FieldMask {
        registers: 0x7FFF,
        flags: 0xF,
        pc: true,
        memory: true,
    };

    /// Entry-state check before the first step. General registers are left
    /// out so a candidate that fails to clear them at reset is reported as a
    /// register divergence on the first step rather than refused.
    pub const SETUP: FieldMask = FieldMask {
        registers: 0,
        flags: 0xF,
        pc: true,
        memory: false,
    };

    pub const NONE: FieldMask = FieldMask {
        registers: 0,
        flags: 0,
        pc: false,
        memory: false,
    };

    pub fn has_reg(&self, n: usize) -> bool {
        n < PC && self.registers & (1 << n) != 0
    }

    pub fn has_flag(&self, flag: Flag) -> bool {
        self.flags & (1 << flag as u8) != 0
    }
}

impl Default for FieldMask {
    fn default() -> Self {
        FieldMask::ALL
    }
}

/// Differences between the masked projections of two states, in field order.
pub fn compare_states(
    reference: &ArchState,
    candidate: &ArchState,
    mask: &FieldMask,
    at: &StepContext,
) -> Vec<Discrepancy> {
    let mut out = Vec::new();
    for n in 0..PC {
        if mask.has_reg(n) && reference.regs[n] != candidate.regs[n] {
            out.push(Discrepancy::new(
                at,
                Field::Reg(n as u8),
                Value::Word(reference.regs[n]),
                Value::Word(candidate.regs[n]),
            ));
        }
    }
    for flag in Flag::ALL {
        let (e, a) = (reference.flags.get(flag), candidate.flags.get(flag));
        if mask.has_flag(flag) && e != a {
            out.push(Discrepancy::new(at, Field::Flag(flag), Value::Bit(e), Value::Bit(a)));
        }
    }
    if mask.pc && reference.pc() != candidate.pc() {
        out.push(Discrepancy::new(
            at,
            Field::Pc,
            Value::Word(reference.pc()),
            Value::Word(candidate.pc()),
        ));
    }
    out
}
