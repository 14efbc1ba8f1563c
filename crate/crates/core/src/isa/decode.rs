//! Decoder and encoder for the supported A32 subset.
//!
//! | class            | encoding                                             |
//! |------------------|------------------------------------------------------|
//! | data processing  | `cccc 00I oooo S nnnn dddd <operand2>`               |
//! | branch           | `cccc 101L <imm24>`                                  |
//! | branch/exchange  | `cccc 0001 0010 1111 1111 1111 0001 mmmm`            |
//! | load/store word  | `cccc 0101 U00L nnnn dddd <imm12>`                   |
//!
//! Data-processing opcodes: AND EOR SUB RSB ADD TST TEQ CMP CMN ORR MOV MVN.
//! Register operands are unshifted (`operand2 = 0000 0000 mmmm`). Fields that
//! the architecture marks should-be-zero must be zero, PC is not accepted as
//! a data-processing or load destination, and BX PC is rejected. Everything
//! outside the table decodes to [`IsaError::UndefinedInstruction`], which
//! keeps `encode(decode(w)) == w` for every accepted word.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Condition, IsaError, Reg};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DpOp {
    And,
    Eor,
    Sub,
    Rsb,
    Add,
    Tst,
    Teq,
    Cmp,
    Cmn,
    Orr,
    Mov,
    Mvn,
}

impl DpOp {
    pub const ALL: [DpOp; 12] = [
        DpOp::And,
        DpOp::Eor,
        DpOp::Sub,
        DpOp::Rsb,
        DpOp::Add,
        DpOp::Tst,
        DpOp::Teq,
        DpOp::Cmp,
        DpOp::Cmn,
        DpOp::Orr,
        DpOp::Mov,
        DpOp::Mvn,
    ];

    pub fn from_opcode(opcode: u32) -> Option<DpOp> {
        Some(match opcode {
            0b0000 => DpOp::And,
            0b0001 => DpOp::Eor,
            0b0010 => DpOp::Sub,
            0b0011 => DpOp::Rsb,
            0b0100 => DpOp::Add,
            0b1000 => DpOp::Tst,
            0b1001 => DpOp::Teq,
            0b1010 => DpOp::Cmp,
            0b1011 => DpOp::Cmn,
            0b1100 => DpOp::Orr,
            0b1101 => DpOp::Mov,
            0b1111 => DpOp::Mvn,
            _ => return None,
        })
    }

    pub fn opcode(self) -> u32 {
        match self {
            DpOp::And => 0b0000,
            DpOp::Eor => 0b0001,
            DpOp::Sub => 0b0010,
            DpOp::Rsb => 0b0011,
            DpOp::Add => 0b0100,
            DpOp::Tst => 0b1000,
            DpOp::Teq => 0b1001,
            DpOp::Cmp => 0b1010,
            DpOp::Cmn => 0b1011,
            DpOp::Orr => 0b1100,
            DpOp::Mov => 0b1101,
            DpOp::Mvn => 0b1111,
        }
    }

    /// TST, TEQ, CMP, CMN: no destination, S bit mandatory.
    pub fn is_compare(self) -> bool {
        matches!(self, DpOp::Tst | DpOp::Teq | DpOp::Cmp | DpOp::Cmn)
    }

    /// MOV and MVN take no first operand.
    pub fn is_move(self) -> bool {
        matches!(self, DpOp::Mov | DpOp::Mvn)
    }

    /// Operations whose C and V come from the adder.
    pub fn is_arithmetic(self) -> bool {
        matches!(
            self,
            DpOp::Sub | DpOp::Rsb | DpOp::Add | DpOp::Cmp | DpOp::Cmn
        )
    }

    /// Subtractions (including compare), the scope of borrow-related flags.
    pub fn is_subtraction(self) -> bool {
        matches!(self, DpOp::Sub | DpOp::Rsb | DpOp::Cmp)
    }

    pub fn name(self) -> &'static str {
        match self {
            DpOp::And => "AND",
            DpOp::Eor => "EOR",
            DpOp::Sub => "SUB",
            DpOp::Rsb => "RSB",
            DpOp::Add => "ADD",
            DpOp::Tst => "TST",
            DpOp::Teq => "TEQ",
            DpOp::Cmp => "CMP",
            DpOp::Cmn => "CMN",
            DpOp::Orr => "ORR",
            DpOp::Mov => "MOV",
            DpOp::Mvn => "MVN",
        }
    }
}

/// Second operand of a data-processing instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand2 {
    /// `imm8` rotated right by `2 * rotate`.
    Imm { imm8: u8, rotate: u8 },
    /// Unshifted register.
    Reg(Reg),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    DataProc {
        op: DpOp,
        set_flags: bool,
        rd: Reg,
        rn: Reg,
        operand2: Operand2,
    },
    /// `offset` is the sign-extended byte offset (`imm24 << 2`).
    Branch { link: bool, offset: i32 },
    BranchExchange { rm: Reg },
    /// Word load/store, immediate offset, no writeback.
    Mem {
        load: bool,
        rd: Reg,
        rn: Reg,
        add: bool,
        offset: u16,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mnemonic {
    And,
    Eor,
    Sub,
    Rsb,
    Add,
    Tst,
    Teq,
    Cmp,
    Cmn,
    Orr,
    Mov,
    Mvn,
    B,
    Bl,
    Bx,
    Ldr,
    Str,
}

impl fmt::Display for Mnemonic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mnemonic::And => "AND",
            Mnemonic::Eor => "EOR",
            Mnemonic::Sub => "SUB",
            Mnemonic::Rsb => "RSB",
            Mnemonic::Add => "ADD",
            Mnemonic::Tst => "TST",
            Mnemonic::Teq => "TEQ",
            Mnemonic::Cmp => "CMP",
            Mnemonic::Cmn => "CMN",
            Mnemonic::Orr => "ORR",
            Mnemonic::Mov => "MOV",
            Mnemonic::Mvn => "MVN",
            Mnemonic::B => "B",
            Mnemonic::Bl => "BL",
            Mnemonic::Bx => "BX",
            Mnemonic::Ldr => "LDR",
            Mnemonic::Str => "STR",
        };
        f.write_str(s)
    }
}

/// A decoded instruction together with the word it came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DecodedInstr {
    pub cond: Condition,
    pub op: Op,
    pub raw_word: u32,
}

impl DecodedInstr {
    /// Builds an instruction from parts, computing its encoding.
    pub fn new(cond: Condition, op: Op) -> Self {
        DecodedInstr {
            cond,
            op,
            raw_word: encode(cond, &op),
        }
    }

    pub fn mnemonic(&self) -> Mnemonic {
        match self.op {
            Op::DataProc { op, .. } => match op {
                DpOp::And => Mnemonic::And,
                DpOp::Eor => Mnemonic::Eor,
                DpOp::Sub => Mnemonic::Sub,
                DpOp::Rsb => Mnemonic::Rsb,
                DpOp::Add => Mnemonic::Add,
                DpOp::Tst => Mnemonic::Tst,
                DpOp::Teq => Mnemonic::Teq,
                DpOp::Cmp => Mnemonic::Cmp,
                DpOp::Cmn => Mnemonic::Cmn,
                DpOp::Orr => Mnemonic::Orr,
                DpOp::Mov => Mnemonic::Mov,
                DpOp::Mvn => Mnemonic::Mvn,
            },
            Op::Branch { link: false, .. } => Mnemonic::B,
            Op::Branch { link: true, .. } => Mnemonic::Bl,
            Op::BranchExchange { .. } => Mnemonic::Bx,
            Op::Mem { load: true, .. } => Mnemonic::Ldr,
            Op::Mem { load: false, .. } => Mnemonic::Str,
        }
    }

    pub fn sets_flags(&self) -> bool {
        matches!(self.op, Op::DataProc { set_flags: true, .. })
    }

    pub fn is_branch(&self) -> bool {
        matches!(self.op, Op::Branch { .. } | Op::BranchExchange { .. })
    }

    /// Register written by the instruction when its condition passes
    /// (excluding the PC write of a branch).
    pub fn destination(&self) -> Option<Reg> {
        match self.op {
            Op::DataProc { op, rd, .. } if !op.is_compare() => Some(rd),
            Op::Branch { link: true, .. } => Some(Reg::LR),
            Op::Mem { load: true, rd, .. } => Some(rd),
            _ => None,
        }
    }

    pub fn encode(&self) -> u32 {
        encode(self.cond, &self.op)
    }
}

/// Encodes an instruction word from its parts.
pub fn encode(cond: Condition, op: &Op) -> u32 {
    let c = (cond.bits() as u32) << 28;
    match *op {
        Op::DataProc {
            op,
            set_flags,
            rd,
            rn,
            operand2,
        } => {
            let (i, op2) = match operand2 {
                Operand2::Imm { imm8, rotate } => (1, (rotate as u32 & 0xF) << 8 | imm8 as u32),
                Operand2::Reg(rm) => (0, rm.number() as u32),
            };
            c | i << 25
                | op.opcode() << 21
                | (set_flags as u32) << 20
                | (rn.number() as u32) << 16
                | (rd.number() as u32) << 12
                | op2
        }
        Op::Branch { link, offset } => {
            c | 0b101 << 25 | (link as u32) << 24 | ((offset >> 2) as u32 & 0x00FF_FFFF)
        }
        Op::BranchExchange { rm } => c | 0x012F_FF10 | rm.number() as u32,
        Op::Mem {
            load,
            rd,
            rn,
            add,
            offset,
        } => {
            c | 0b0101 << 24
                | (add as u32) << 23
                | (load as u32) << 20
                | (rn.number() as u32) << 16
                | (rd.number() as u32) << 12
                | (offset as u32 & 0xFFF)
        }
    }
}

/// Decodes one instruction word.
pub fn decode(word: u32) -> Result<DecodedInstr, IsaError> {
    let undefined = IsaError::UndefinedInstruction(word);
    let cond = Condition::from_bits((word >> 28) as u8).map_err(|_| undefined.clone())?;

    let op = if word & 0x0FFF_FFF0 == 0x012F_FF10 {
        let rm = Reg::from_bits(word);
        if rm.is_pc() {
            return Err(undefined);
        }
        Op::BranchExchange { rm }
    } else if word & 0x0E00_0000 == 0x0A00_0000 {
        // Sign-extend imm24 and scale by 4.
        let offset = ((word << 8) as i32) >> 6;
        Op::Branch {
            link: word & (1 << 24) != 0,
            offset,
        }
    } else if word & 0x0F60_0000 == 0x0500_0000 {
        let load = word & (1 << 20) != 0;
        let rd = Reg::from_bits(word >> 12);
        if rd.is_pc() {
            return Err(undefined);
        }
        Op::Mem {
            load,
            rd,
            rn: Reg::from_bits(word >> 16),
            add: word & (1 << 23) != 0,
            offset: (word & 0xFFF) as u16,
        }
    } else if word & 0x0C00_0000 == 0 {
        decode_data_processing(word).ok_or(undefined)?
    } else {
        return Err(undefined);
    };

    Ok(DecodedInstr {
        cond,
        op,
        raw_word: word,
    })
}

fn decode_data_processing(word: u32) -> Option<Op> {
    let imm = word & (1 << 25) != 0;
    let op = DpOp::from_opcode((word >> 21) & 0xF)?;
    let set_flags = word & (1 << 20) != 0;
    let rn = Reg::from_bits(word >> 16);
    let rd = Reg::from_bits(word >> 12);

    if op.is_compare() {
        // Without S these encodings are MRS/MSR/BX/etc.
        if !set_flags || rd.number() != 0 {
            return None;
        }
    } else if rd.is_pc() {
        return None;
    }
    if op.is_move() && rn.number() != 0 {
        return None;
    }

    let operand2 = if imm {
        Operand2::Imm {
            imm8: (word & 0xFF) as u8,
            rotate: ((word >> 8) & 0xF) as u8,
        }
    } else {
        // Shifted-register and register-shifted forms are outside the subset.
        if word & 0xFF0 != 0 {
            return None;
        }
        Operand2::Reg(Reg::from_bits(word))
    };

    Some(Op::DataProc {
        op,
        set_flags,
        rd,
        rn,
        operand2,
    })
}
