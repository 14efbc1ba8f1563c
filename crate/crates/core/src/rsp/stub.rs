//! A gdbstub exposing any [`Target`].
//!
//! Every state change goes through the target's public operations, so the
//! served model is observed without being modified.

use std::collections::BTreeSet;
use std::net::{TcpListener, TcpStream};
use std::ops::Range;

use log::{debug, info, warn};

use super::codec::{self, Parsed};
use super::conn::{Connection, Transcript};
use super::{RegisterLayout, RegisterRole, RspError};
use crate::diff::{RegisterId, StepStatus, Target, TargetError};

/// SIGTRAP: a step or breakpoint completed.
const SIGTRAP: u8 = 5;
/// SIGINT: a continue was interrupted by the client.
const SIGINT: u8 = 2;

/// Error codes sent as `Exx`.
pub const E_PARSE: u8 = 0x01;
pub const E_READ_ONLY: u8 = 0x0d;
pub const E_ACCESS: u8 = 0x0e;

/// Largest `m` request honoured, in bytes.
const MAX_READ: usize = 0x2000;

#[derive(Clone, Debug)]
pub struct StubOptions {
    pub layout: RegisterLayout,
    /// Address ranges that reject `M` writes.
    pub read_only: Vec<Range<u32>>,
    /// Steps a single `c` may run before reporting a stop.
    pub continue_limit: u64,
    pub transcript: Option<std::path::PathBuf>,
}

impl Default for StubOptions {
    fn default() -> Self {
        StubOptions {
            layout: RegisterLayout::arm(),
            read_only: Vec::new(),
            continue_limit: 10_000_000,
            transcript: None,
        }
    }
}

/// How a client session ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SessionEnd {
    Detached,
    Killed,
    Disconnected,
}

struct Stub<'a> {
    target: &'a mut dyn Target,
    options: &'a StubOptions,
    breakpoints: BTreeSet<u32>,
    last_signal: u8,
    last_reply: Vec<u8>,
    /// The current command was already acknowledged.
    acked: bool,
}

enum Action {
    Reply(Vec<u8>),
    /// Reply, then end the session.
    ReplyAndEnd(Vec<u8>, SessionEnd),
    End(SessionEnd),
}

fn error(code: u8) -> Vec<u8> {
    format!("E{code:02x}").into_bytes()
}

fn target_error(e: &TargetError) -> Vec<u8> {
    if e.is_access_error() {
        error(E_ACCESS)
    } else {
        error(E_PARSE)
    }
}

fn parse_hex_u32(s: &[u8]) -> Option<u32> {
    u32::from_str_radix(std::str::from_utf8(s).ok()?, 16).ok()
}

/// Splits `addr,len` into numbers.
fn addr_len(s: &[u8]) -> Option<(u32, usize)> {
    let comma = s.iter().position(|&b| b == b',')?;
    let addr = parse_hex_u32(&s[..comma])?;
    let len = parse_hex_u32(&s[comma + 1..])? as usize;
    Some((addr, len))
}

impl Stub<'_> {
    fn handle(&mut self, conn: &mut Connection, pkt: &[u8]) -> Result<Action, RspError> {
        let Some((&cmd, rest)) = pkt.split_first() else {
            return Ok(Action::Reply(Vec::new()));
        };
        let reply = match cmd {
            b'?' => format!("S{:02x}", self.last_signal).into_bytes(),
            b'q' if rest.starts_with(b"Supported") => b"PacketSize=4000".to_vec(),
            b'g' if rest.is_empty() => match self.target.read_state() {
                Ok(s) => self.options.layout.encode_registers(&s).into_bytes(),
                Err(e) => target_error(&e),
            },
            b'G' => self.write_all_registers(rest),
            b'p' => match parse_hex_u32(rest) {
                Some(n) => self.read_register(n),
                None => error(E_PARSE),
            },
            b'P' => self.write_register(rest),
            b'm' => match addr_len(rest) {
                Some((addr, len)) if len <= MAX_READ => match self.target.read_memory(addr, len) {
                    Ok(bytes) => hex::encode(bytes).into_bytes(),
                    Err(e) => target_error(&e),
                },
                _ => error(E_PARSE),
            },
            b'M' => self.write_memory(rest),
            b's' => {
                if !rest.is_empty() {
                    if let Some(addr) = parse_hex_u32(rest) {
                        if let Err(e) = self.target.write_register(RegisterId::Core(15), addr) {
                            return Ok(Action::Reply(target_error(&e)));
                        }
                    }
                }
                let status = self.target.step();
                self.step_reply(status)
            }
            b'c' => self.run(conn)?,
            b'Z' | b'z' => self.breakpoint(cmd == b'Z', rest),
            b'D' => return Ok(Action::ReplyAndEnd(b"OK".to_vec(), SessionEnd::Detached)),
            b'k' => return Ok(Action::End(SessionEnd::Killed)),
            _ => Vec::new(),
        };
        Ok(Action::Reply(reply))
    }

    fn step_reply(&mut self, status: Result<StepStatus, TargetError>) -> Vec<u8> {
        match status {
            Ok(StepStatus::Completed { .. }) => self.last_signal = SIGTRAP,
            Ok(StepStatus::Faulted(kind)) => self.last_signal = kind.signal(),
            Err(e) => return target_error(&e),
        }
        format!("S{:02x}", self.last_signal).into_bytes()
    }

    fn run(&mut self, conn: &mut Connection) -> Result<Vec<u8>, RspError> {
        // Acknowledge up front so the client knows it may send an interrupt.
        conn.send(&[codec::ACK])?;
        self.acked = true;
        for n in 0..self.options.continue_limit {
            if n % 1024 == 1023 && conn.interrupt_pending()? {
                self.last_signal = SIGINT;
                return Ok(format!("S{SIGINT:02x}").into_bytes());
            }
            match self.target.step() {
                Ok(StepStatus::Completed { .. }) => {}
                other => return Ok(self.step_reply(other)),
            }
            match self.target.read_state() {
                Ok(s) if self.breakpoints.contains(&s.pc()) => break,
                Ok(_) => {}
                Err(e) => return Ok(target_error(&e)),
            }
        }
        self.last_signal = SIGTRAP;
        Ok(format!("S{SIGTRAP:02x}").into_bytes())
    }

    fn breakpoint(&mut self, insert: bool, rest: &[u8]) -> Vec<u8> {
        // Only software breakpoints: `Z0,addr,kind`.
        let Some(args) = rest.strip_prefix(b"0,") else {
            return Vec::new();
        };
        let addr = args
            .iter()
            .position(|&b| b == b',')
            .and_then(|i| parse_hex_u32(&args[..i]));
        match addr {
            Some(a) => {
                if insert {
                    self.breakpoints.insert(a);
                } else {
                    self.breakpoints.remove(&a);
                }
                b"OK".to_vec()
            }
            None => error(E_PARSE),
        }
    }

    fn register_id(role: RegisterRole) -> Option<RegisterId> {
        match role {
            RegisterRole::Core(n) => Some(RegisterId::Core(n)),
            RegisterRole::Cpsr => Some(RegisterId::Cpsr),
            RegisterRole::Ignored => None,
        }
    }

    fn read_register(&mut self, number: u32) -> Vec<u8> {
        let Some(desc) = self.options.layout.by_number(number) else {
            return error(E_PARSE);
        };
        let state = match self.target.read_state() {
            Ok(s) => s,
            Err(e) => return target_error(&e),
        };
        let bytes = match desc.role {
            RegisterRole::Core(n) => state.regs[n as usize].to_le_bytes().to_vec(),
            RegisterRole::Cpsr => state.cpsr().to_le_bytes().to_vec(),
            RegisterRole::Ignored => vec![0; desc.bytes],
        };
        hex::encode(bytes).into_bytes()
    }

    fn write_register(&mut self, rest: &[u8]) -> Vec<u8> {
        let Some(eq) = rest.iter().position(|&b| b == b'=') else {
            return error(E_PARSE);
        };
        let number = parse_hex_u32(&rest[..eq]);
        let value = hex::decode(&rest[eq + 1..]).ok();
        let (Some(number), Some(value)) = (number, value) else {
            return error(E_PARSE);
        };
        let Some(desc) = self.options.layout.by_number(number) else {
            return error(E_PARSE);
        };
        if value.len() != desc.bytes {
            return error(E_PARSE);
        }
        if let Some(id) = Stub::register_id(desc.role) {
            let word = u32::from_le_bytes(value[..4].try_into().expect("4-byte register"));
            if let Err(e) = self.target.write_register(id, word) {
                return target_error(&e);
            }
        }
        b"OK".to_vec()
    }

    fn write_all_registers(&mut self, rest: &[u8]) -> Vec<u8> {
        let values = match self.options.layout.decode_write(rest) {
            Ok(v) => v,
            Err(_) => return error(E_PARSE),
        };
        for (role, value) in values {
            if let Some(id) = Stub::register_id(role) {
                if let Err(e) = self.target.write_register(id, value) {
                    return target_error(&e);
                }
            }
        }
        b"OK".to_vec()
    }

    fn write_memory(&mut self, rest: &[u8]) -> Vec<u8> {
        let Some(colon) = rest.iter().position(|&b| b == b':') else {
            return error(E_PARSE);
        };
        let (Some((addr, len)), Ok(data)) = (addr_len(&rest[..colon]), hex::decode(&rest[colon + 1..]))
        else {
            return error(E_PARSE);
        };
        if data.len() != len {
            return error(E_PARSE);
        }
        let end = addr as u64 + len as u64;
        let read_only = self
            .options
            .read_only
            .iter()
            .any(|r| (addr as u64) < r.end as u64 && end > r.start as u64);
        if read_only {
            return error(E_READ_ONLY);
        }
        match self.target.write_memory(addr, &data) {
            Ok(()) => b"OK".to_vec(),
            Err(e) => target_error(&e),
        }
    }

    fn send_reply(&mut self, conn: &mut Connection, reply: &[u8]) -> Result<(), RspError> {
        self.last_reply = codec::frame(reply);
        let mut out = Vec::with_capacity(self.last_reply.len() + 1);
        if !std::mem::take(&mut self.acked) {
            out.push(codec::ACK);
        }
        out.extend_from_slice(&self.last_reply);
        conn.send(&out)
    }
}

/// Serves one client connection until it detaches, kills or disconnects.
pub fn serve_connection(
    target: &mut dyn Target,
    stream: TcpStream,
    options: &StubOptions,
) -> Result<SessionEnd, RspError> {
    let mut conn = Connection::new(stream);
    if let Some(path) = &options.transcript {
        conn.set_transcript(Some(Transcript::open(path)?));
    }
    let mut stub = Stub {
        target,
        options,
        breakpoints: BTreeSet::new(),
        last_signal: SIGTRAP,
        last_reply: Vec::new(),
        acked: false,
    };
    loop {
        let item = match conn.next_item(false) {
            Ok(item) => item,
            Err(RspError::ProtocolTimeout(_)) => return Ok(SessionEnd::Disconnected),
            Err(RspError::Io(e)) => {
                warn!("connection lost: {e}");
                return Ok(SessionEnd::Disconnected);
            }
            Err(RspError::BadChecksum { expected, got }) => {
                debug!("bad checksum {got:#04x}, expected {expected:#04x}; sending nak");
                conn.send(&[codec::NAK])?;
                continue;
            }
            Err(RspError::MalformedFrame(m)) => {
                warn!("malformed input: {m}");
                conn.send(&[codec::NAK])?;
                continue;
            }
            Err(e) => return Err(e),
        };
        match item {
            Parsed::Packet(p) => match stub.handle(&mut conn, &p)? {
                Action::Reply(r) => stub.send_reply(&mut conn, &r)?,
                Action::ReplyAndEnd(r, end) => {
                    stub.send_reply(&mut conn, &r)?;
                    return Ok(end);
                }
                Action::End(end) => {
                    conn.send(&[codec::ACK])?;
                    return Ok(end);
                }
            },
            Parsed::Nak => {
                let last = stub.last_reply.clone();
                conn.send(&last)?;
            }
            Parsed::Ack | Parsed::Interrupt | Parsed::Incomplete => {}
        }
    }
}

/// Accepts clients on `listener` one at a time. With `once`, returns after
/// the first session.
pub fn serve_stub(
    target: &mut dyn Target,
    listener: TcpListener,
    options: &StubOptions,
    once: bool,
) -> Result<(), RspError> {
    loop {
        let (stream, peer) = listener.accept()?;
        info!("debugger attached from {peer}");
        let end = serve_connection(target, stream, options)?;
        info!("session ended: {end:?}");
        if once || end == SessionEnd::Killed {
            return Ok(());
        }
    }
}
