use super::alu::expand_imm;
use super::decode::{decode, DecodedInstr, Op, Operand2};

fn imm_text(value: u32) -> String {
    if value < 0x100 {
        format!("#{value}")
    } else {
        format!("#{value:#x}")
    }
}

/// UAL-style text for `instr` located at `pc` (branch targets are absolute).
pub fn disassemble(instr: &DecodedInstr, pc: u32) -> String {
    let cond = instr.cond.suffix();
    match instr.op {
        Op::DataProc {
            op,
            set_flags,
            rd,
            rn,
            operand2,
        } => {
            let s = if set_flags && !op.is_compare() { "S" } else { "" };
            let op2 = match operand2 {
                Operand2::Imm { imm8, rotate } => imm_text(expand_imm(imm8, rotate, false).0),
                Operand2::Reg(rm) => rm.to_string(),
            };
            let name = op.name();
            if op.is_compare() {
                format!("{name}{cond} {rn}, {op2}")
            } else if op.is_move() {
                format!("{name}{s}{cond} {rd}, {op2}")
            } else {
                format!("{name}{s}{cond} {rd}, {rn}, {op2}")
            }
        }
        Op::Branch { link, offset } => {
            let target = pc.wrapping_add(8).wrapping_add(offset as u32);
            let name = if link { "BL" } else { "B" };
            format!("{name}{cond} {target:#x}")
        }
        Op::BranchExchange { rm } => format!("BX{cond} {rm}"),
        Op::Mem {
            load,
            rd,
            rn,
            add,
            offset,
        } => {
            let name = if load { "LDR" } else { "STR" };
            let sign = if add { "" } else { "-" };
            if offset == 0 && add {
                format!("{name}{cond} {rd}, [{rn}]")
            } else {
                format!("{name}{cond} {rd}, [{rn}, #{sign}{offset}]")
            }
        }
    }
}

/// Disassembles a raw word, falling back to a placeholder for words outside
/// the subset.
pub fn disassemble_word(word: u32, pc: u32) -> String {
    match decode(word) {
        Ok(instr) => disassemble(&instr, pc),
        Err(_) => format!("<undefined {word:#010x}>"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fig2_listing() {
        assert_eq!(disassemble_word(0xE3A0_000A, 0), "MOV R0, #10");
        assert_eq!(disassemble_word(0xE3A0_1014, 4), "MOV R1, #20");
        assert_eq!(disassemble_word(0xE150_0001, 8), "CMP R0, R1");
    }

    #[test]
    fn other_forms() {
        assert_eq!(disassemble_word(0xEAFF_FFFE, 0x10), "B 0x10");
        assert_eq!(disassemble_word(0x0280_1004, 0), "ADDEQ R1, R0, #4");
        assert_eq!(disassemble_word(0xE3B0_0102, 0), "MOVS R0, #0x80000000");
        assert_eq!(disassemble_word(0xE591_2004, 0), "LDR R2, [R1, #4]");
        assert_eq!(disassemble_word(0xE50F_0000, 0), "STR R0, [PC, #-0]");
        assert_eq!(disassemble_word(0xE12F_FF13, 0), "BX R3");
        assert_eq!(disassemble_word(0xFFFF_FFFF, 0), "<undefined 0xffffffff>");
    }
}
