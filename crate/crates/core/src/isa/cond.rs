use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Flags, IsaError};

/// A32 condition field. The unconditional space (0b1111) is outside the
/// supported subset and has no variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    Eq,
    Ne,
    Cs,
    Cc,
    Mi,
    Pl,
    Vs,
    Vc,
    Hi,
    Ls,
    Ge,
    Lt,
    Gt,
    Le,
    Al,
}

impl Condition {
    pub const ALL: [Condition; 15] = [
        Condition::Eq,
        Condition::Ne,
        Condition::Cs,
        Condition::Cc,
        Condition::Mi,
        Condition::Pl,
        Condition::Vs,
        Condition::Vc,
        Condition::Hi,
        Condition::Ls,
        Condition::Ge,
        Condition::Lt,
        Condition::Gt,
        Condition::Le,
        Condition::Al,
    ];

    pub fn from_bits(code: u8) -> Result<Condition, IsaError> {
        Condition::ALL
            .get(code as usize)
            .copied()
            .ok_or(IsaError::InvalidCondition(code))
    }

    pub fn bits(self) -> u8 {
        self as u8
    }

    pub fn holds(self, f: Flags) -> bool {
        match self {
            Condition::Eq => f.z,
            Condition::Ne => !f.z,
            Condition::Cs => f.c,
            Condition::Cc => !f.c,
            Condition::Mi => f.n,
            Condition::Pl => !f.n,
            Condition::Vs => f.v,
            Condition::Vc => !f.v,
            Condition::Hi => f.c && !f.z,
            Condition::Ls => !f.c || f.z,
            Condition::Ge => f.n == f.v,
            Condition::Lt => f.n != f.v,
            Condition::Gt => !f.z && f.n == f.v,
            Condition::Le => f.z || f.n != f.v,
            Condition::Al => true,
        }
    }

    /// Assembler suffix; empty for AL.
    pub fn suffix(self) -> &'static str {
        match self {
            Condition::Eq => "EQ",
            Condition::Ne => "NE",
            Condition::Cs => "CS",
            Condition::Cc => "CC",
            Condition::Mi => "MI",
            Condition::Pl => "PL",
            Condition::Vs => "VS",
            Condition::Vc => "VC",
            Condition::Hi => "HI",
            Condition::Ls => "LS",
            Condition::Ge => "GE",
            Condition::Lt => "LT",
            Condition::Gt => "GT",
            Condition::Le => "LE",
            Condition::Al => "",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Al => f.write_str("AL"),
            c => f.write_str(c.suffix()),
        }
    }
}

/// Evaluates a raw 4-bit condition code against `flags`.
pub fn evaluate_condition(flags: Flags, code: u8) -> Result<bool, IsaError> {
    Condition::from_bits(code).map(|c| c.holds(flags))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eq_with_z_set() {
        let f = Flags::new(false, true, false, false);
        assert!(evaluate_condition(f, 0x0).unwrap());
        assert!(!evaluate_condition(f, 0x1).unwrap());
    }

    #[test]
    fn al_always() {
        for bits in 0..16u8 {
            let f = Flags::new(bits & 8 != 0, bits & 4 != 0, bits & 2 != 0, bits & 1 != 0);
            assert!(evaluate_condition(f, 0xE).unwrap());
        }
    }

    #[test]
    fn ge_false_when_n_differs_from_v() {
        let f = Flags::new(true, false, false, false);
        assert!(!evaluate_condition(f, 0xA).unwrap());
        assert!(evaluate_condition(f, 0xB).unwrap());
    }

    #[test]
    fn unconditional_space_rejected() {
        assert_eq!(
            evaluate_condition(Flags::default(), 0xF),
            Err(IsaError::InvalidCondition(0xF))
        );
    }

    #[test]
    fn pairs_are_complementary() {
        // Conditions 2k and 2k+1 are negations of each other (except AL).
        for bits in 0..16u8 {
            let f = Flags::new(bits & 8 != 0, bits & 4 != 0, bits & 2 != 0, bits & 1 != 0);
            for k in 0..7u8 {
                let a = evaluate_condition(f, 2 * k).unwrap();
                let b = evaluate_condition(f, 2 * k + 1).unwrap();
                assert_ne!(a, b, "cond {k} flags {f}");
            }
        }
    }
}
