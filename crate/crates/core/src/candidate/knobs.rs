use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CandidateError;
use crate::diff::DiscrepancyClass;
use crate::isa::{DecodedInstr, DpOp, Op, Operand2};

/// A named semantic defect of the candidate model.
///
/// Variants are listed in catalog order, which is also the tie-break order
/// of the builtin synthesizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knob {
    /// S-suffixed SUB/RSB and CMP leave N at its previous value.
    CmpSkipsNUpdate,
    /// S-suffixed SUB/RSB and CMP report C as borrow instead of not-borrow.
    CarryInverted,
    /// S-suffixed arithmetic never sets V.
    OverflowAlwaysClear,
    /// S-suffixed instructions compute Z from the low byte of the result.
    ZFromLowByteOnly,
    /// Non-branching instructions advance the pc by 8.
    #[serde(rename = "pc_step_8")]
    PcStep8,
    /// Reset leaves R0..R14 at their previous (power-on) contents.
    ResetSkipsRegfile,
    /// EQ and NE conditions are evaluated as each other.
    CondEqNeSwapped,
    /// Immediate operands use imm8 without applying the rotation.
    ImmRotateIgnored,
    /// LDR sign-extends the low halfword of the loaded word.
    LdrSignExtendsHalfword,
    /// STR stores the word big-endian.
    StrWritesBigEndian,
    /// B/BL offsets apply to pc + 4 instead of pc + 8.
    #[serde(rename = "branch_offset_off_by_4")]
    BranchOffsetOffBy4,
    /// Data-processing instructions without S still update NZCV.
    FlagsUpdatedOnNonSOps,
}

impl Knob {
    pub const ALL: [Knob; 12] = [
        Knob::CmpSkipsNUpdate,
        Knob::CarryInverted,
        Knob::OverflowAlwaysClear,
        Knob::ZFromLowByteOnly,
        Knob::PcStep8,
        Knob::ResetSkipsRegfile,
        Knob::CondEqNeSwapped,
        Knob::ImmRotateIgnored,
        Knob::LdrSignExtendsHalfword,
        Knob::StrWritesBigEndian,
        Knob::BranchOffsetOffBy4,
        Knob::FlagsUpdatedOnNonSOps,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Knob::CmpSkipsNUpdate => "cmp_skips_n_update",
            Knob::CarryInverted => "carry_inverted",
            Knob::OverflowAlwaysClear => "overflow_always_clear",
            Knob::ZFromLowByteOnly => "z_from_low_byte_only",
            Knob::PcStep8 => "pc_step_8",
            Knob::ResetSkipsRegfile => "reset_skips_regfile",
            Knob::CondEqNeSwapped => "cond_eq_ne_swapped",
            Knob::ImmRotateIgnored => "imm_rotate_ignored",
            Knob::LdrSignExtendsHalfword => "ldr_sign_extends_halfword",
            Knob::StrWritesBigEndian => "str_writes_big_endian",
            Knob::BranchOffsetOffBy4 => "branch_offset_off_by_4",
            Knob::FlagsUpdatedOnNonSOps => "flags_updated_on_non_s_ops",
        }
    }

    pub fn index(self) -> usize {
        Knob::ALL.iter().position(|k| *k == self).expect("catalog member")
    }

    /// Discrepancy class the knob first shows up as on its witness program.
    pub fn expected_class(self) -> DiscrepancyClass {
        match self {
            Knob::CmpSkipsNUpdate
            | Knob::CarryInverted
            | Knob::OverflowAlwaysClear
            | Knob::ZFromLowByteOnly
            | Knob::FlagsUpdatedOnNonSOps => DiscrepancyClass::FlagMismatch,
            Knob::PcStep8 | Knob::CondEqNeSwapped | Knob::BranchOffsetOffBy4 => {
                DiscrepancyClass::ControlFlowMismatch
            }
            Knob::ResetSkipsRegfile | Knob::ImmRotateIgnored | Knob::LdrSignExtendsHalfword => {
                DiscrepancyClass::RegisterMismatch
            }
            Knob::StrWritesBigEndian => DiscrepancyClass::MemoryMismatch,
        }
    }

    /// Whether the knob can change the outcome of `instr`.
    ///
    /// `ResetSkipsRegfile` acts at reset, so its first divergence can land on
    /// any instruction.
    pub fn in_scope(self, instr: &DecodedInstr) -> bool {
        use crate::isa::Condition;
        let dp = match instr.op {
            Op::DataProc {
                op,
                set_flags,
                operand2,
                ..
            } => Some((op, set_flags, operand2)),
            _ => None,
        };
        match self {
            Knob::CmpSkipsNUpdate | Knob::CarryInverted => {
                matches!(dp, Some((op, true, _)) if op.is_subtraction())
            }
            Knob::OverflowAlwaysClear => matches!(dp, Some((op, true, _)) if op.is_arithmetic()),
            Knob::ZFromLowByteOnly => matches!(dp, Some((_, true, _))),
            Knob::FlagsUpdatedOnNonSOps => matches!(dp, Some((_, false, _))),
            Knob::PcStep8 => !matches!(instr.op, Op::Branch { .. } | Op::BranchExchange { .. }),
            Knob::ResetSkipsRegfile => true,
            Knob::CondEqNeSwapped => matches!(instr.cond, Condition::Eq | Condition::Ne),
            Knob::ImmRotateIgnored => matches!(dp, Some((_, _, Operand2::Imm { .. }))),
            Knob::LdrSignExtendsHalfword => matches!(instr.op, Op::Mem { load: true, .. }),
            Knob::StrWritesBigEndian => matches!(instr.op, Op::Mem { load: false, .. }),
            Knob::BranchOffsetOffBy4 => matches!(instr.op, Op::Branch { .. }),
        }
    }

    /// Data-processing ops whose flags the S-scoped flag knobs touch.
    pub(crate) fn touches_flags_of(self, op: DpOp) -> bool {
        match self {
            Knob::CmpSkipsNUpdate | Knob::CarryInverted => op.is_subtraction(),
            Knob::OverflowAlwaysClear => op.is_arithmetic(),
            Knob::ZFromLowByteOnly => true,
            _ => false,
        }
    }
}

impl fmt::Display for Knob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Knob {
    type Err = CandidateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Knob::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| CandidateError::UnknownKnob(s.to_string()))
    }
}
