//! Flag arithmetic and operand expansion for the data-processing subset.

use super::Flags;

/// Flags of `a - b` as set by a flag-setting subtraction or compare.
///
/// C is the inverted borrow: set when `a >= b` unsigned.
pub fn alu_flags_sub(a: u32, b: u32) -> Flags {
    let r = a.wrapping_sub(b);
    Flags {
        n: r & 0x8000_0000 != 0,
        z: r == 0,
        c: a >= b,
        v: ((a ^ b) & (a ^ r)) & 0x8000_0000 != 0,
    }
}

/// Flags of `a + b`.
pub fn alu_flags_add(a: u32, b: u32) -> Flags {
    let (r, carry) = a.overflowing_add(b);
    Flags {
        n: r & 0x8000_0000 != 0,
        z: r == 0,
        c: carry,
        v: (!(a ^ b) & (a ^ r)) & 0x8000_0000 != 0,
    }
}

/// Flags after a logical operation: N and Z from the result, C from the
/// shifter carry-out, V untouched.
pub fn alu_flags_logical(result: u32, shifter_carry: bool, prior: Flags) -> Flags {
    Flags {
        n: result & 0x8000_0000 != 0,
        z: result == 0,
        c: shifter_carry,
        v: prior.v,
    }
}

/// Expands an 8-bit immediate rotated right by `2 * rotate`.
///
/// Returns the value and the shifter carry-out. With a zero rotation the
/// carry-out is the incoming C flag, otherwise bit 31 of the result.
pub fn expand_imm(imm8: u8, rotate: u8, carry_in: bool) -> (u32, bool) {
    let value = (imm8 as u32).rotate_right(2 * (rotate as u32 & 0xF));
    let carry = if rotate == 0 {
        carry_in
    } else {
        value & 0x8000_0000 != 0
    };
    (value, carry)
}

/// Finds an (imm8, rotate) pair encoding `value`, preferring the smallest
/// rotation. Returns `None` when the value is not representable.
pub fn encode_imm(value: u32) -> Option<(u8, u8)> {
    (0..16u8).find_map(|rot| {
        let imm = value.rotate_left(2 * rot as u32);
        (imm <= 0xFF).then_some((imm as u8, rot))
    })
}
