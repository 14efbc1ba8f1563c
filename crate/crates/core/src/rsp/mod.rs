//! GDB Remote Serial Protocol: codec, client session and stub server.
//!
//! The supported packets are `g G p P m M s c z0 Z0 ? qSupported D k` plus
//! the `+`/`-` acknowledgements. Ack mode is always on. Anything else is
//! answered with the empty packet.

pub mod codec;
mod client;
mod conn;
mod layout;
mod stub;

use thiserror::Error;

pub use client::{RspReference, RspSession, StopReply};
pub use codec::{frame, parse, parse_command, Parsed};
pub use conn::{timeout_from_env, Transcript, DEFAULT_TIMEOUT, TIMEOUT_ENV};
pub use layout::{RegisterDesc, RegisterLayout, RegisterRole};
pub use stub::{serve_connection, serve_stub, SessionEnd, StubOptions, E_ACCESS, E_PARSE, E_READ_ONLY};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum RspError {
    #[error("bad checksum: computed {expected:#04x}, frame says {got:#04x}")]
    BadChecksum { expected: u8, got: u8 },
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("target error E{0:02x}")]
    TargetError(u8),
    #[error("protocol timeout: {0}")]
    ProtocolTimeout(String),
    #[error("unexpected reply: {0}")]
    UnexpectedReply(String),
    #[error("a command is already awaiting its reply")]
    CommandInFlight,
    #[error("register layout: {0}")]
    Layout(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for RspError {
    fn from(e: std::io::Error) -> Self {
        RspError::Io(e.to_string())
    }
}
