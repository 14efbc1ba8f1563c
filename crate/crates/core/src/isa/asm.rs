//! Encoders for hand-written programs (witnesses, tests, the generator).
//!
//! Functions panic on operands the subset cannot encode; they are meant for
//! literal programs, not user input.

use super::alu::encode_imm;
use super::decode::{encode, DpOp, Op, Operand2};
use super::{Condition, Reg};

fn imm(value: u32) -> Operand2 {
    let (imm8, rotate) =
        encode_imm(value).unwrap_or_else(|| panic!("{value:#x} is not a rotated immediate"));
    Operand2::Imm { imm8, rotate }
}

pub fn dp_imm(op: DpOp, set_flags: bool, rd: u8, rn: u8, value: u32) -> u32 {
    encode(
        Condition::Al,
        &Op::DataProc {
            op,
            set_flags,
            rd: Reg::new(rd),
            rn: Reg::new(rn),
            operand2: imm(value),
        },
    )
}

pub fn dp_reg(op: DpOp, set_flags: bool, rd: u8, rn: u8, rm: u8) -> u32 {
    encode(
        Condition::Al,
        &Op::DataProc {
            op,
            set_flags,
            rd: Reg::new(rd),
            rn: Reg::new(rn),
            operand2: Operand2::Reg(Reg::new(rm)),
        },
    )
}

pub fn mov_imm(rd: u8, value: u32) -> u32 {
    dp_imm(DpOp::Mov, false, rd, 0, value)
}

pub fn movs_imm(rd: u8, value: u32) -> u32 {
    dp_imm(DpOp::Mov, true, rd, 0, value)
}

pub fn cmp_reg(rn: u8, rm: u8) -> u32 {
    dp_reg(DpOp::Cmp, true, 0, rn, rm)
}

pub fn cmp_imm(rn: u8, value: u32) -> u32 {
    dp_imm(DpOp::Cmp, true, 0, rn, value)
}

/// Branch at `from` to `to`.
pub fn b(from: u32, to: u32) -> u32 {
    branch(false, from, to)
}

/// Branch with link at `from` to `to`.
pub fn bl(from: u32, to: u32) -> u32 {
    branch(true, from, to)
}

fn branch(link: bool, from: u32, to: u32) -> u32 {
    let offset = to.wrapping_sub(from.wrapping_add(8)) as i32;
    assert!(offset % 4 == 0, "branch target must be word aligned");
    assert!((-(1 << 25)..(1 << 25)).contains(&offset), "branch out of range");
    encode(Condition::Al, &Op::Branch { link, offset })
}

pub fn bx(rm: u8) -> u32 {
    encode(Condition::Al, &Op::BranchExchange { rm: Reg::new(rm) })
}

/// `LDR rd, [rn, #offset]`.
pub fn ldr(rd: u8, rn: u8, offset: i32) -> u32 {
    mem(true, rd, rn, offset)
}

/// `STR rd, [rn, #offset]`.
pub fn str(rd: u8, rn: u8, offset: i32) -> u32 {
    mem(false, rd, rn, offset)
}

fn mem(load: bool, rd: u8, rn: u8, offset: i32) -> u32 {
    assert!(offset.unsigned_abs() < 0x1000, "offset out of range");
    encode(
        Condition::Al,
        &Op::Mem {
            load,
            rd: Reg::new(rd),
            rn: Reg::new(rn),
            add: offset >= 0,
            offset: offset.unsigned_abs() as u16,
        },
    )
}

/// Replaces the condition field of `word`.
pub fn with_cond(word: u32, cond: Condition) -> u32 {
    (word & 0x0FFF_FFFF) | (cond.bits() as u32) << 28
}

/// `B .`, the conventional end-of-program spin.
pub const SPIN: u32 = 0xEAFF_FFFE;
