use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use log::{debug, trace};

use super::codec::{self, Parsed};
use super::conn::{Connection, Transcript};
use super::{RegisterLayout, RegisterRole, RspError};
use crate::diff::{RegisterId, StepStatus, Target, TargetError};
use crate::isa::{decode, ArchState, FaultKind, Op, Program};

/// Retransmissions of one command before giving up.
const MAX_RETRIES: usize = 8;
/// Bytes per `M` packet when loading an image.
const WRITE_CHUNK: usize = 1024;

/// A parsed stop reply.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StopReply {
    /// `Sxx` or `Txx...`.
    Signal(u8),
    /// `Wxx`: the target exited.
    Exited(u8),
    /// `Xxx`: the target terminated with a signal.
    Terminated(u8),
}

impl StopReply {
    pub fn parse(reply: &[u8]) -> Result<StopReply, RspError> {
        let text = std::str::from_utf8(reply)
            .map_err(|_| RspError::UnexpectedReply("non-ASCII stop reply".into()))?;
        let code = |s: &str| {
            s.get(1..3)
                .and_then(|h| u8::from_str_radix(h, 16).ok())
                .ok_or_else(|| RspError::UnexpectedReply(format!("stop reply {text:?}")))
        };
        match text.as_bytes().first() {
            Some(b'S') | Some(b'T') => Ok(StopReply::Signal(code(text)?)),
            Some(b'W') => Ok(StopReply::Exited(code(text)?)),
            Some(b'X') => Ok(StopReply::Terminated(code(text)?)),
            _ => Err(error_or_unexpected(reply)),
        }
    }
}

/// `Exx` replies become [`RspError::TargetError`]; anything else is
/// unexpected.
fn error_or_unexpected(reply: &[u8]) -> RspError {
    if reply.len() == 3 && reply[0] == b'E' {
        if let Ok(code) = u8::from_str_radix(&String::from_utf8_lossy(&reply[1..]), 16) {
            return RspError::TargetError(code);
        }
    }
    RspError::UnexpectedReply(String::from_utf8_lossy(reply).into_owned())
}

fn expect_ok(reply: Vec<u8>) -> Result<(), RspError> {
    if reply == b"OK" {
        Ok(())
    } else {
        Err(error_or_unexpected(&reply))
    }
}

/// A client session with strictly one outstanding command.
#[derive(Debug)]
pub struct RspSession {
    conn: Connection,
    layout: RegisterLayout,
    in_flight: bool,
    last_frame: Vec<u8>,
    /// Naks received for commands, for diagnostics and tests.
    pub retransmissions: u64,
}

impl RspSession {
    pub fn connect(endpoint: &str, layout: RegisterLayout, timeout: Duration) -> Result<Self, RspError> {
        let addrs: Vec<_> = endpoint
            .to_socket_addrs()
            .map_err(|e| RspError::Io(format!("{endpoint}: {e}")))?
            .collect();
        let mut last = None;
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, timeout) {
                Ok(s) => return RspSession::from_stream(s, layout, timeout),
                Err(e) => last = Some(e),
            }
        }
        Err(RspError::Io(format!(
            "{endpoint}: {}",
            last.map(|e| e.to_string()).unwrap_or_else(|| "no address".into())
        )))
    }

    pub fn from_stream(stream: TcpStream, layout: RegisterLayout, timeout: Duration) -> Result<Self, RspError> {
        layout.validate()?;
        let conn = Connection::new(stream);
        conn.set_read_timeout(Some(timeout))?;
        Ok(RspSession {
            conn,
            layout,
            in_flight: false,
            last_frame: Vec::new(),
            retransmissions: 0,
        })
    }

    pub fn set_transcript(&mut self, transcript: Option<Transcript>) {
        self.conn.set_transcript(transcript);
    }

    pub fn layout(&self) -> &RegisterLayout {
        &self.layout
    }

    /// Sends one command and waits for its acknowledgement. Fails locally,
    /// before writing anything, if a reply is still outstanding.
    pub fn send_command(&mut self, payload: &[u8]) -> Result<(), RspError> {
        if self.in_flight {
            return Err(RspError::CommandInFlight);
        }
        trace!("-> {}", String::from_utf8_lossy(payload));
        self.last_frame = codec::frame(payload);
        let frame = self.last_frame.clone();
        self.conn.send(&frame)?;
        self.in_flight = true;
        let mut naks = 0;
        loop {
            match self.conn.next_item(true) {
                Ok(Parsed::Ack) => return Ok(()),
                Ok(Parsed::Nak) => {
                    naks += 1;
                    self.retransmissions += 1;
                    if naks > MAX_RETRIES {
                        self.in_flight = false;
                        return Err(RspError::UnexpectedReply("command refused repeatedly".into()));
                    }
                    self.conn.send(&frame)?;
                }
                Ok(other) => {
                    self.in_flight = false;
                    return Err(RspError::UnexpectedReply(format!("{other:?} before ack")));
                }
                Err(e) => {
                    self.in_flight = false;
                    return Err(e);
                }
            }
        }
    }

    /// Waits for the reply to the outstanding command, acknowledging it.
    pub fn recv_reply(&mut self) -> Result<Vec<u8>, RspError> {
        let mut bad = 0;
        let result = loop {
            match self.conn.next_item(true) {
                Ok(Parsed::Packet(p)) => {
                    self.conn.send(&[codec::ACK])?;
                    break Ok(p);
                }
                // Late duplicate acks are harmless.
                Ok(Parsed::Ack) => {}
                Ok(Parsed::Nak) => self.conn.send(&self.last_frame.clone())?,
                Ok(other) => break Err(RspError::UnexpectedReply(format!("{other:?}"))),
                Err(RspError::BadChecksum { .. }) | Err(RspError::MalformedFrame(_)) if bad < MAX_RETRIES => {
                    bad += 1;
                    self.conn.send(&[codec::NAK])?;
                }
                Err(e) => break Err(e),
            }
        };
        self.in_flight = false;
        if let Ok(p) = &result {
            trace!("<- {}", String::from_utf8_lossy(p));
        }
        result
    }

    pub fn command(&mut self, payload: &[u8]) -> Result<Vec<u8>, RspError> {
        self.send_command(payload)?;
        self.recv_reply()
    }

    /// Registers and flags, plus the raw cpsr.
    pub fn read_registers(&mut self) -> Result<(ArchState, u32), RspError> {
        let reply = self.command(b"g")?;
        if reply.first() == Some(&b'E') && reply.len() == 3 {
            return Err(error_or_unexpected(&reply));
        }
        self.layout.decode_registers(&reply)
    }

    pub fn write_registers(&mut self, state: &ArchState) -> Result<(), RspError> {
        let mut payload = b"G".to_vec();
        payload.extend_from_slice(self.layout.encode_registers(state).as_bytes());
        expect_ok(self.command(&payload)?)
    }

    pub fn read_register(&mut self, number: u32) -> Result<u32, RspError> {
        let reply = self.command(format!("p{number:x}").as_bytes())?;
        let bytes = hex::decode(&reply).map_err(|_| error_or_unexpected(&reply))?;
        let arr: [u8; 4] = bytes
            .get(..4)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| error_or_unexpected(&reply))?;
        Ok(u32::from_le_bytes(arr))
    }

    pub fn write_register(&mut self, number: u32, value: u32) -> Result<(), RspError> {
        let payload = format!("P{number:x}={}", hex::encode(value.to_le_bytes()));
        expect_ok(self.command(payload.as_bytes())?)
    }

    pub fn read_memory(&mut self, addr: u32, len: usize) -> Result<Vec<u8>, RspError> {
        let reply = self.command(format!("m{addr:x},{len:x}").as_bytes())?;
        match hex::decode(&reply) {
            Ok(bytes) if bytes.len() == len => Ok(bytes),
            _ => Err(error_or_unexpected(&reply)),
        }
    }

    pub fn write_memory(&mut self, addr: u32, data: &[u8]) -> Result<(), RspError> {
        let mut payload = format!("M{addr:x},{:x}:", data.len()).into_bytes();
        payload.extend_from_slice(hex::encode(data).as_bytes());
        expect_ok(self.command(&payload)?)
    }

    pub fn single_step(&mut self) -> Result<StopReply, RspError> {
        let reply = self.command(b"s")?;
        StopReply::parse(&reply)
    }

    pub fn cont(&mut self) -> Result<StopReply, RspError> {
        let reply = self.command(b"c")?;
        StopReply::parse(&reply)
    }

    pub fn halt_reason(&mut self) -> Result<StopReply, RspError> {
        let reply = self.command(b"?")?;
        StopReply::parse(&reply)
    }

    pub fn set_breakpoint(&mut self, addr: u32) -> Result<(), RspError> {
        expect_ok(self.command(format!("Z0,{addr:x},4").as_bytes())?)
    }

    pub fn remove_breakpoint(&mut self, addr: u32) -> Result<(), RspError> {
        expect_ok(self.command(format!("z0,{addr:x},4").as_bytes())?)
    }

    pub fn query_supported(&mut self) -> Result<String, RspError> {
        let reply = self.command(b"qSupported:swbreak+")?;
        Ok(String::from_utf8_lossy(&reply).into_owned())
    }

    pub fn detach(&mut self) -> Result<(), RspError> {
        expect_ok(self.command(b"D")?)
    }

    /// Sends `k`. No reply is expected.
    pub fn kill(&mut self) -> Result<(), RspError> {
        self.send_command(b"k")?;
        self.in_flight = false;
        Ok(())
    }
}

/// A remote reference simulator driven over RSP, as a [`Target`].
///
/// A debugger does not report what an instruction stored, so the store
/// address and the condition outcome of each step are inferred by decoding
/// the instruction at the pc against the pre-step state.
#[derive(Debug)]
pub struct RspReference {
    session: RspSession,
    endpoint: String,
    /// Write the program image on load (off for targets with preloaded ROM).
    pub load_image: bool,
    cycles: u64,
    cpsr: u32,
    cached: Option<ArchState>,
    fetched: Option<(u32, Vec<u8>)>,
}

impl RspReference {
    pub fn new(session: RspSession, endpoint: impl Into<String>) -> Self {
        RspReference {
            session,
            endpoint: endpoint.into(),
            load_image: true,
            cycles: 0,
            cpsr: crate::isa::CPSR_MODE_USR,
            cached: None,
            fetched: None,
        }
    }

    pub fn connect(endpoint: &str, layout: RegisterLayout, timeout: Duration) -> Result<Self, RspError> {
        let session = RspSession::connect(endpoint, layout, timeout)?;
        Ok(RspReference::new(session, endpoint))
    }

    pub fn session(&mut self) -> &mut RspSession {
        &mut self.session
    }

    fn invalidate(&mut self) {
        self.cached = None;
        self.fetched = None;
    }

    fn register_number(&self, reg: RegisterId) -> Result<u32, TargetError> {
        let role = match reg {
            RegisterId::Core(n) if n < 16 => RegisterRole::Core(n),
            RegisterId::Core(n) => return Err(TargetError::InvalidRegister(n)),
            RegisterId::Cpsr => RegisterRole::Cpsr,
        };
        Ok(self
            .session
            .layout()
            .number_of(role)
            .expect("validated layout maps every register"))
    }
}

impl Target for RspReference {
    fn load(&mut self, program: &Program) -> Result<(), TargetError> {
        self.invalidate();
        let (_, cpsr) = self.session.read_registers()?;
        if self.load_image {
            let base = program.image.base();
            for (i, chunk) in program.image.bytes().chunks(WRITE_CHUNK).enumerate() {
                self.session
                    .write_memory(base + (i * WRITE_CHUNK) as u32, chunk)?;
            }
        }
        let mut entry = ArchState::default();
        entry.set_pc(program.entry);
        self.session.write_registers(&entry)?;
        // Keep the mode bits the target reported; only the flags are reset.
        self.cpsr = cpsr & 0x0FFF_FFFF;
        let n = self.register_number(RegisterId::Cpsr)?;
        self.session.write_register(n, self.cpsr)?;
        self.cycles = 0;
        debug!("loaded {} into {}", program.name, self.endpoint);
        Ok(())
    }

    fn read_state(&mut self) -> Result<ArchState, TargetError> {
        if let Some(s) = self.cached {
            return Ok(s);
        }
        let (mut state, cpsr) = self.session.read_registers()?;
        self.cpsr = cpsr & 0x0FFF_FFFF;
        state.cycle_count = self.cycles;
        self.cached = Some(state);
        Ok(state)
    }

    fn read_memory(&mut self, addr: u32, len: usize) -> Result<Vec<u8>, TargetError> {
        if let Some((a, bytes)) = &self.fetched {
            if *a == addr && bytes.len() == len {
                return Ok(bytes.clone());
            }
        }
        let bytes = self.session.read_memory(addr, len)?;
        self.fetched = Some((addr, bytes.clone()));
        Ok(bytes)
    }

    fn write_memory(&mut self, addr: u32, data: &[u8]) -> Result<(), TargetError> {
        self.fetched = None;
        Ok(self.session.write_memory(addr, data)?)
    }

    fn write_register(&mut self, reg: RegisterId, value: u32) -> Result<(), TargetError> {
        let number = self.register_number(reg)?;
        let value = match reg {
            RegisterId::Cpsr => (value & 0xF000_0000) | self.cpsr,
            RegisterId::Core(_) => value,
        };
        self.cached = None;
        Ok(self.session.write_register(number, value)?)
    }

    fn step(&mut self) -> Result<StepStatus, TargetError> {
        let pre = self.read_state()?;
        let instr = match self.read_word(pre.pc()) {
            Ok(w) => decode(w).ok(),
            Err(e) if e.is_access_error() => None,
            Err(e) => return Err(e),
        };
        let executed = instr.is_none_or(|i| i.cond.holds(pre.flags));
        let mut mem_writes = Vec::new();
        if let Some(i) = instr {
            if let Op::Mem {
                load: false,
                rn,
                add,
                offset,
                ..
            } = i.op
            {
                if executed {
                    let base = pre.operand(rn);
                    mem_writes.push(if add {
                        base.wrapping_add(offset as u32)
                    } else {
                        base.wrapping_sub(offset as u32)
                    });
                }
            }
        }
        let reply = self.session.single_step();
        self.invalidate();
        match reply? {
            StopReply::Signal(5) => {
                self.cycles += 1;
                Ok(StepStatus::Completed {
                    cycles: 1,
                    executed,
                    mem_writes,
                })
            }
            StopReply::Signal(sig) => match FaultKind::from_signal(sig) {
                Some(kind) => Ok(StepStatus::Faulted(kind)),
                None => Err(RspError::UnexpectedReply(format!("stop signal {sig}")).into()),
            },
            other => Err(RspError::UnexpectedReply(format!("{other:?}")).into()),
        }
    }

    fn describe(&self) -> String {
        format!("rsp {}", self.endpoint)
    }
}
