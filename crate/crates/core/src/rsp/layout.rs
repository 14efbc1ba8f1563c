use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RspError;
use crate::isa::{ArchState, Flags, CPSR_MODE_USR};
use crate::SCHEMA_VERSION;

/// What a register slot holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegisterRole {
    Core(u8),
    Cpsr,
    /// Present on the wire but not part of the compared state.
    Ignored,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegisterDesc {
    pub name: String,
    /// Number used by `p`/`P` packets.
    pub number: u32,
    /// Width in bytes, little-endian on the wire.
    pub bytes: usize,
    pub role: RegisterRole,
}

/// Register slots in `g`-packet order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegisterLayout {
    pub registers: Vec<RegisterDesc>,
}

#[derive(Deserialize)]
struct LayoutDoc {
    schema_version: u32,
    #[serde(rename = "register")]
    registers: Vec<RegisterDesc>,
}

fn core(n: u8) -> RegisterDesc {
    RegisterDesc {
        name: format!("r{n}"),
        number: n as u32,
        bytes: 4,
        role: RegisterRole::Core(n),
    }
}

fn cpsr() -> RegisterDesc {
    RegisterDesc {
        name: "cpsr".into(),
        number: 25,
        bytes: 4,
        role: RegisterRole::Cpsr,
    }
}

impl Default for RegisterLayout {
    fn default() -> Self {
        RegisterLayout::arm()
    }
}

impl RegisterLayout {
    /// r0..r15 as registers 0..15 followed by cpsr as register 25.
    pub fn arm() -> Self {
        let mut registers: Vec<_> = (0..16).map(core).collect();
        registers.push(cpsr());
        RegisterLayout { registers }
    }

    /// The older layout with FPA registers f0..f7 (12 bytes each) and fps
    /// between pc and cpsr, as sent by some simulators.
    pub fn arm_with_fpa() -> Self {
        let mut registers: Vec<_> = (0..16).map(core).collect();
        for i in 0..8 {
            registers.push(RegisterDesc {
                name: format!("f{i}"),
                number: 16 + i,
                bytes: 12,
                role: RegisterRole::Ignored,
            });
        }
        registers.push(RegisterDesc {
            name: "fps".into(),
            number: 24,
            bytes: 4,
            role: RegisterRole::Ignored,
        });
        registers.push(cpsr());
        RegisterLayout { registers }
    }

    /// Checks that every core register and the cpsr appear exactly once.
    pub fn validate(&self) -> Result<(), RspError> {
        let mut seen_core = [false; 16];
        let mut seen_cpsr = false;
        let mut numbers = std::collections::BTreeSet::new();
        for r in &self.registers {
            if !numbers.insert(r.number) {
                return Err(RspError::Layout(format!("register number {} repeated", r.number)));
            }
            match r.role {
                RegisterRole::Core(n) if (n as usize) < 16 => {
                    if std::mem::replace(&mut seen_core[n as usize], true) {
                        return Err(RspError::Layout(format!("r{n} mapped twice")));
                    }
                    if r.bytes != 4 {
                        return Err(RspError::Layout(format!("{} must be 4 bytes", r.name)));
                    }
                }
                RegisterRole::Core(n) => {
                    return Err(RspError::Layout(format!("no core register r{n}")))
                }
                RegisterRole::Cpsr => {
                    if std::mem::replace(&mut seen_cpsr, true) {
                        return Err(RspError::Layout("cpsr mapped twice".into()));
                    }
                    if r.bytes != 4 {
                        return Err(RspError::Layout("cpsr must be 4 bytes".into()));
                    }
                }
                RegisterRole::Ignored => {}
            }
        }
        if let Some(n) = seen_core.iter().position(|s| !s) {
            return Err(RspError::Layout(format!("r{n} not mapped")));
        }
        if !seen_cpsr {
            return Err(RspError::Layout("cpsr not mapped".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, RspError> {
        let doc: LayoutDoc =
            toml::from_str(text).map_err(|e| RspError::Layout(e.message().to_string()))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(RspError::Layout(format!(
                "unsupported schema_version {}",
                doc.schema_version
            )));
        }
        let layout = RegisterLayout {
            registers: doc.registers,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn load(path: &Path) -> Result<Self, RspError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RspError::Layout(format!("{}: {e}", path.display())))?;
        RegisterLayout::from_toml(&text)
    }

    pub fn total_bytes(&self) -> usize {
        self.registers.iter().map(|r| r.bytes).sum()
    }

    pub fn by_number(&self, number: u32) -> Option<&RegisterDesc> {
        self.registers.iter().find(|r| r.number == number)
    }

    pub fn number_of(&self, role: RegisterRole) -> Option<u32> {
        self.registers.iter().find(|r| r.role == role).map(|r| r.number)
    }

    /// Encodes `state` as a `g` reply body (hex).
    pub fn encode_registers(&self, state: &ArchState) -> String {
        let mut bytes = Vec::with_capacity(self.total_bytes());
        for r in &self.registers {
            match r.role {
                RegisterRole::Core(n) => bytes.extend_from_slice(&state.regs[n as usize].to_le_bytes()),
                RegisterRole::Cpsr => bytes.extend_from_slice(&state.cpsr().to_le_bytes()),
                RegisterRole::Ignored => bytes.extend(std::iter::repeat_n(0, r.bytes)),
            }
        }
        hex::encode(bytes)
    }

    /// Decodes a `g` reply into registers, flags and the raw cpsr value.
    pub fn decode_registers(&self, hex_text: &[u8]) -> Result<(ArchState, u32), RspError> {
        let bytes = hex::decode(hex_text)
            .map_err(|e| RspError::UnexpectedReply(format!("register block: {e}")))?;
        if bytes.len() < self.total_bytes() {
            return Err(RspError::UnexpectedReply(format!(
                "register block has {} bytes, layout needs {}",
                bytes.len(),
                self.total_bytes()
            )));
        }
        let mut state = ArchState::default();
        let mut cpsr = CPSR_MODE_USR;
        let mut at = 0;
        for r in &self.registers {
            let field = &bytes[at..at + r.bytes];
            at += r.bytes;
            let word = || u32::from_le_bytes(field[..4].try_into().expect("4-byte field"));
            match r.role {
                RegisterRole::Core(n) => state.regs[n as usize] = word(),
                RegisterRole::Cpsr => {
                    cpsr = word();
                    state.flags = Flags::from_cpsr(cpsr);
                }
                RegisterRole::Ignored => {}
            }
        }
        Ok((state, cpsr))
    }

    /// Parses a `G` payload body into per-register values.
    pub fn decode_write(&self, hex_text: &[u8]) -> Result<Vec<(RegisterRole, u32)>, RspError> {
        let bytes = hex::decode(hex_text)
            .map_err(|e| RspError::MalformedFrame(format!("register block: {e}")))?;
        if bytes.len() != self.total_bytes() {
            return Err(RspError::MalformedFrame("register block length".into()));
        }
        let mut out = Vec::new();
        let mut at = 0;
        for r in &self.registers {
            let field = &bytes[at..at + r.bytes];
            at += r.bytes;
            if r.role != RegisterRole::Ignored {
                out.push((r.role, u32::from_le_bytes(field[..4].try_into().expect("4 bytes"))));
            }
        }
        Ok(out)
    }
}
