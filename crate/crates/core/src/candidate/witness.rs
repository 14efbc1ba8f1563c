//! Minimal programs that expose each knob.

use super::Knob;
use crate::isa::{asm, Condition, Program};

/// `MOV R0,#10; MOV R1,#20; CMP R0,R1`.
pub fn fig2_program() -> Program {
    Program::from_words(
        "fig2",
        0,
        &[asm::mov_imm(0, 10), asm::mov_imm(1, 20), asm::cmp_reg(0, 1)],
    )
    .expect("non-empty program")
}

/// The witness program for `knob`, loaded at address 0.
pub fn witness(knob: Knob) -> Program {
    let name = format!("witness_{}", knob.name());
    let words_and_exit: (Vec<u32>, Option<u32>) = match knob {
        Knob::CmpSkipsNUpdate => {
            let mut p = fig2_program();
            p.name = name;
            return p;
        }
        Knob::CarryInverted => (vec![asm::mov_imm(0, 5), asm::cmp_reg(0, 0)], None),
        Knob::OverflowAlwaysClear => (
            vec![
                asm::mov_imm(0, 0x8000_0000),
                asm::mov_imm(1, 1),
                asm::cmp_reg(0, 1),
            ],
            None,
        ),
        Knob::ZFromLowByteOnly => (vec![asm::movs_imm(0, 0x100)], None),
        Knob::PcStep8 => (vec![asm::mov_imm(0, 1), asm::mov_imm(1, 2)], None),
        Knob::ResetSkipsRegfile => (vec![asm::mov_imm(0, 1)], None),
        Knob::CondEqNeSwapped => (
            vec![
                asm::mov_imm(0, 1),
                asm::cmp_imm(0, 1),
                asm::with_cond(asm::b(8, 0x10), Condition::Eq),
                asm::mov_imm(1, 2),
                asm::mov_imm(2, 3),
            ],
            None,
        ),
        Knob::ImmRotateIgnored => (vec![asm::mov_imm(0, 0x100)], None),
        // The data word sits past the exit address.
        Knob::LdrSignExtendsHalfword => (
            vec![asm::ldr(0, 15, 0), asm::mov_imm(1, 1), 0x0000_8765],
            Some(8),
        ),
        Knob::StrWritesBigEndian => (
            vec![
                asm::mov_imm(0, 0xFF),
                asm::str(0, 15, 0),
                asm::mov_imm(1, 1),
                0,
            ],
            Some(12),
        ),
        Knob::BranchOffsetOffBy4 => (
            vec![asm::b(0, 8), asm::mov_imm(1, 1), asm::mov_imm(2, 2)],
            None,
        ),
        Knob::FlagsUpdatedOnNonSOps => (vec![asm::mov_imm(0, 0)], None),
    };
    let (words, exit) = words_and_exit;
    let p = Program::from_words(name, 0, &words).expect("non-empty program");
    match exit {
        Some(e) => p.with_exit(e),
        None => p,
    }
}

/// One witness per catalog knob, in catalog order.
pub fn witness_set() -> Vec<Program> {
    Knob::ALL.iter().map(|k| witness(*k)).collect()
}
