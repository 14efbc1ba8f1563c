//! Seeded random programs over the instruction subset.
//!
//! Layout, for `code_words = n` and `data_words = m`, loaded at address 0:
//!
//! * word 0: `MOV R9, #4n` (base of the data region)
//! * words 1..n-1: random instructions
//! * word n-1: `B .`, which is also the exit address
//! * words n..n+m: random data
//!
//! Data-processing operands come from R0..R7. Stores go to `[R9, #4k]`
//! inside the data region and loads read either there or pc-relative inside
//! the image. Branch targets are code words. BX is emitted as the pair
//! `MOV R8, #target; BX R8`, and R8 is never written otherwise, so every
//! control transfer stays inside the code region.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::isa::{asm, encode, encode_imm, Condition, DpOp, Mnemonic, Op, Operand2, Program, Reg};

/// Bumped whenever the same (seed, index) would produce a different program.
pub const GENERATOR_VERSION: u32 = 1;

const DATA_BASE_REG: u8 = 9;
const BX_REG: u8 = 8;

const MNEMONICS: [Mnemonic; 17] = [
    Mnemonic::And,
    Mnemonic::Eor,
    Mnemonic::Sub,
    Mnemonic::Rsb,
    Mnemonic::Add,
    Mnemonic::Tst,
    Mnemonic::Teq,
    Mnemonic::Cmp,
    Mnemonic::Cmn,
    Mnemonic::Orr,
    Mnemonic::Mov,
    Mnemonic::Mvn,
    Mnemonic::B,
    Mnemonic::Bl,
    Mnemonic::Bx,
    Mnemonic::Ldr,
    Mnemonic::Str,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GenConfig {
    /// Code region length in words, including the prologue and final spin.
    /// `4 * code_words` must fit an 8-bit immediate rotated by an even amount.
    pub code_words: u32,
    pub data_words: u32,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            code_words: 64,
            data_words: 64,
        }
    }
}

fn dp_op(m: Mnemonic) -> Option<DpOp> {
    Some(match m {
        Mnemonic::And => DpOp::And,
        Mnemonic::Eor => DpOp::Eor,
        Mnemonic::Sub => DpOp::Sub,
        Mnemonic::Rsb => DpOp::Rsb,
        Mnemonic::Add => DpOp::Add,
        Mnemonic::Tst => DpOp::Tst,
        Mnemonic::Teq => DpOp::Teq,
        Mnemonic::Cmp => DpOp::Cmp,
        Mnemonic::Cmn => DpOp::Cmn,
        Mnemonic::Orr => DpOp::Orr,
        Mnemonic::Mov => DpOp::Mov,
        Mnemonic::Mvn => DpOp::Mvn,
        _ => return None,
    })
}

struct Builder<'a> {
    rng: &'a mut ChaCha8Rng,
    cfg: GenConfig,
}

impl Builder<'_> {
    fn low_reg(&mut self) -> Reg {
        Reg::new(self.rng.gen_range(0..8))
    }

    fn cond(&mut self) -> Condition {
        *Condition::ALL.choose(self.rng).expect("non-empty")
    }

    fn code_target(&mut self) -> u32 {
        self.rng.gen_range(0..self.cfg.code_words) * 4
    }

    /// A code address that `MOV` can materialize: the random target with its
    /// low bits cleared down to eight significant bits at an even rotation.
    fn immediate_code_target(&mut self) -> u32 {
        let t = self.code_target();
        let top = 31 - t.max(1).leading_zeros();
        let shift = (top.saturating_sub(7) + 1) & !1;
        t & !((1u32 << shift) - 1)
    }

    fn data_offset(&mut self) -> u16 {
        (self.rng.gen_range(0..self.cfg.data_words) * 4) as u16
    }

    fn data_processing(&mut self, cond: Condition, op: DpOp) -> u32 {
        let operand2 = if self.rng.gen_bool(0.5) {
            Operand2::Imm {
                imm8: self.rng.gen(),
                rotate: self.rng.gen_range(0..16),
            }
        } else {
            Operand2::Reg(self.low_reg())
        };
        let rd = if op.is_compare() { Reg::new(0) } else { self.low_reg() };
        let rn = if op.is_move() { Reg::new(0) } else { self.low_reg() };
        let set_flags = op.is_compare() || self.rng.gen_bool(0.5);
        encode(
            cond,
            &Op::DataProc {
                op,
                set_flags,
                rd,
                rn,
                operand2,
            },
        )
    }

    fn memory(&mut self, cond: Condition, load: bool, at: u32) -> u32 {
        let rd = self.low_reg();
        let image_words = self.cfg.code_words + self.cfg.data_words;
        let op = if load && self.rng.gen_bool(0.5) {
            let base = at as i64 + 8;
            let lo = (base - 4092).max(0) / 4;
            let hi = (base + 4092).min(image_words as i64 * 4 - 4) / 4;
            let target = self.rng.gen_range(lo..=hi) * 4;
            let delta = target - base;
            Op::Mem {
                load,
                rd,
                rn: Reg::PC,
                add: delta >= 0,
                offset: delta.unsigned_abs() as u16,
            }
        } else {
            Op::Mem {
                load,
                rd,
                rn: Reg::new(DATA_BASE_REG),
                add: true,
                offset: self.data_offset(),
            }
        };
        encode(cond, &op)
    }

    fn branch(&mut self, cond: Condition, link: bool, at: u32) -> u32 {
        let target = self.code_target();
        let offset = target.wrapping_sub(at.wrapping_add(8)) as i32;
        encode(cond, &Op::Branch { link, offset })
    }
}

/// Program `index` of the suite for `seed`.
pub fn generate(seed: u64, index: u64, cfg: GenConfig) -> Program {
    assert!(cfg.code_words >= 3, "code region too small");
    let data_base = cfg.code_words * 4;
    assert!(
        encode_imm(data_base).is_some(),
        "4 * code_words must be a rotated immediate"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);

    let mut code = vec![asm::mov_imm(DATA_BASE_REG, data_base)];
    let last = cfg.code_words as usize - 1;
    let mut b = Builder { rng: &mut rng, cfg };
    while code.len() < last {
        let at = code.len() as u32 * 4;
        let cond = b.cond();
        let m = *MNEMONICS.choose(b.rng).expect("non-empty");
        let word = match m {
            Mnemonic::B => b.branch(cond, false, at),
            Mnemonic::Bl => b.branch(cond, true, at),
            Mnemonic::Ldr => b.memory(cond, true, at),
            Mnemonic::Str => b.memory(cond, false, at),
            Mnemonic::Bx if code.len() + 1 < last => {
                let target = b.immediate_code_target();
                code.push(asm::mov_imm(BX_REG, target));
                encode(cond, &Op::BranchExchange { rm: Reg::new(BX_REG) })
            }
            Mnemonic::Bx => b.data_processing(cond, DpOp::Mov),
            _ => b.data_processing(cond, dp_op(m).expect("data-processing mnemonic")),
        };
        code.push(word);
    }
    code.push(asm::SPIN);
    let exit = last as u32 * 4;
    code.extend((0..cfg.data_words).map(|_| b.rng.gen::<u32>()));

    Program::from_words(format!("gen-v{GENERATOR_VERSION}-s{seed}-{index}"), 0, &code)
        .expect("non-empty program")
        .with_exit(exit)
}

/// Programs `0..count` for `seed`.
pub fn generate_suite(seed: u64, count: u64, cfg: GenConfig) -> Vec<Program> {
    (0..count).map(|i| generate(seed, i, cfg)).collect()
}
