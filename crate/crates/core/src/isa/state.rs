use std::fmt;

use serde::{Deserialize, Serialize};

/// Index of the program counter in the register file.
pub const PC: usize = 15;
/// Link register.
pub const LR: usize = 14;

/// Mode bits reported in the low byte of CPSR (User mode). The interpreter
/// has no modes; the value only exists so debuggers see a sane CPSR.
pub const CPSR_MODE_USR: u32 = 0x10;

/// The NZCV condition flags.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Flags {
    pub n: bool,
    pub z: bool,
    pub c: bool,
    pub v: bool,
}

impl Flags {
    pub const fn new(n: bool, z: bool, c: bool, v: bool) -> Self {
        Flags { n, z, c, v }
    }

    /// Flags packed into CPSR bits 31..28.
    pub fn to_cpsr_bits(self) -> u32 {
        (self.n as u32) << 31 | (self.z as u32) << 30 | (self.c as u32) << 29 | (self.v as u32) << 28
    }

    pub fn from_cpsr(cpsr: u32) -> Self {
        Flags {
            n: cpsr & (1 << 31) != 0,
            z: cpsr & (1 << 30) != 0,
            c: cpsr & (1 << 29) != 0,
            v: cpsr & (1 << 28) != 0,
        }
    }

    pub fn get(self, flag: Flag) -> bool {
        match flag {
            Flag::N => self.n,
            Flag::Z => self.z,
            Flag::C => self.c,
            Flag::V => self.v,
        }
    }

    pub fn set(&mut self, flag: Flag, value: bool) {
        match flag {
            Flag::N => self.n = value,
            Flag::Z => self.z = value,
            Flag::C => self.c = value,
            Flag::V => self.v = value,
        }
    }
}

impl fmt::Display for Flags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bit = |b: bool, c: char| if b { c } else { '-' };
        write!(
            f,
            "{}{}{}{}",
            bit(self.n, 'N'),
            bit(self.z, 'Z'),
            bit(self.c, 'C'),
            bit(self.v, 'V')
        )
    }
}

/// One of the four condition flags, in architectural order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Flag {
    N,
    Z,
    C,
    V,
}

impl Flag {
    pub const ALL: [Flag; 4] = [Flag::N, Flag::Z, Flag::C, Flag::V];

    pub fn letter(self) -> char {
        match self {
            Flag::N => 'N',
            Flag::Z => 'Z',
            Flag::C => 'C',
            Flag::V => 'V',
        }
    }

    pub fn from_letter(c: char) -> Option<Flag> {
        match c.to_ascii_uppercase() {
            'N' => Some(Flag::N),
            'Z' => Some(Flag::Z),
            'C' => Some(Flag::C),
            'V' => Some(Flag::V),
            _ => None,
        }
    }
}

/// A general-purpose register number, 0..=15.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Reg(u8);

impl Reg {
    pub const PC: Reg = Reg(15);
    pub const LR: Reg = Reg(14);

    /// Panics if `n > 15`.
    pub const fn new(n: u8) -> Reg {
        assert!(n < 16, "register number out of range");
        Reg(n)
    }

    /// Builds a register from the low four bits of `bits`.
    pub const fn from_bits(bits: u32) -> Reg {
        Reg((bits & 0xF) as u8)
    }

    pub const fn index(self) -> usize {
        self.0 as usize
    }

    pub const fn number(self) -> u8 {
        self.0
    }

    pub fn is_pc(self) -> bool {
        self.0 == 15
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            13 => f.write_str("SP"),
            14 => f.write_str("LR"),
            15 => f.write_str("PC"),
            n => write!(f, "R{n}"),
        }
    }
}

/// Observable CPU state: sixteen registers (R15 is the address of the
/// instruction about to execute), the condition flags and a cycle counter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchState {
    pub regs: [u32; 16],
    pub flags: Flags,
    pub cycle_count: u64,
}

impl ArchState {
    pub fn pc(&self) -> u32 {
        self.regs[PC]
    }

    pub fn set_pc(&mut self, pc: u32) {
        self.regs[PC] = pc;
    }

    pub fn reg(&self, r: Reg) -> u32 {
        self.regs[r.index()]
    }

    /// Value of `r` as seen by an operand read: R15 reads as the current
    /// instruction address plus 8.
    pub fn operand(&self, r: Reg) -> u32 {
        if r.is_pc() {
            self.pc().wrapping_add(8)
        } else {
            self.regs[r.index()]
        }
    }

    /// CPSR as a debugger sees it: flags in bits 31..28, User mode below.
    pub fn cpsr(&self) -> u32 {
        self.flags.to_cpsr_bits() | CPSR_MODE_USR
    }

    /// True when registers and flags agree; the cycle counter is ignored.
    pub fn same_architectural_state(&self, other: &ArchState) -> bool {
        self.regs == other.regs && self.flags == other.flags
    }
}
