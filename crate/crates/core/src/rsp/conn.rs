use std::fs::{File, OpenOptions};
use std::io::{self, ErrorKind, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use super::codec::{self, Parsed};
use super::RspError;

/// Default per-command timeout.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

/// Environment variable overriding the protocol timeout, in seconds.
pub const TIMEOUT_ENV: &str = "HARNESS_TIMEOUT_SECS";

/// The protocol timeout, honouring [`TIMEOUT_ENV`].
pub fn timeout_from_env() -> Duration {
    std::env::var(TIMEOUT_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<f64>().ok())
        .filter(|s| *s > 0.0)
        .map(Duration::from_secs_f64)
        .unwrap_or(DEFAULT_TIMEOUT)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Sent,
    Received,
}

/// Append-only log of raw wire bytes.
#[derive(Debug)]
pub struct Transcript {
    file: File,
}

impl Transcript {
    pub fn open(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Transcript { file })
    }

    /// One line per chunk: milliseconds since the epoch, `->` or `<-`, and
    /// the bytes with non-printables as `\xNN`.
    pub fn record(&mut self, dir: Direction, bytes: &[u8]) {
        let ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        let arrow = match dir {
            Direction::Sent => "->",
            Direction::Received => "<-",
        };
        let text: String = bytes
            .iter()
            .map(|&b| {
                if (0x20..0x7F).contains(&b) && b != b'\\' {
                    (b as char).to_string()
                } else {
                    format!("\\x{b:02x}")
                }
            })
            .collect();
        // Transcripts are best effort; a full disk must not break a session.
        let _ = writeln!(self.file, "{ms} {arrow} {text}");
    }
}

/// A byte stream with frame-level reads.
#[derive(Debug)]
pub struct Connection {
    stream: TcpStream,
    buf: Vec<u8>,
    transcript: Option<Transcript>,
}

impl Connection {
    pub fn new(stream: TcpStream) -> Self {
        // Small request/response packets; latency matters more than batching.
        let _ = stream.set_nodelay(true);
        Connection {
            stream,
            buf: Vec::new(),
            transcript: None,
        }
    }

    pub fn set_transcript(&mut self, transcript: Option<Transcript>) {
        self.transcript = transcript;
    }

    pub fn set_read_timeout(&self, timeout: Option<Duration>) -> Result<(), RspError> {
        self.stream.set_read_timeout(timeout).map_err(RspError::from)
    }

    pub fn send(&mut self, bytes: &[u8]) -> Result<(), RspError> {
        if let Some(t) = self.transcript.as_mut() {
            t.record(Direction::Sent, bytes);
        }
        self.stream.write_all(bytes).map_err(RspError::from)
    }

    fn fill(&mut self) -> Result<(), RspError> {
        let mut chunk = [0u8; 4096];
        match self.stream.read(&mut chunk) {
            Ok(0) => Err(RspError::ProtocolTimeout("connection closed".into())),
            Ok(n) => {
                if let Some(t) = self.transcript.as_mut() {
                    t.record(Direction::Received, &chunk[..n]);
                }
                self.buf.extend_from_slice(&chunk[..n]);
                Ok(())
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                Err(RspError::ProtocolTimeout("no reply within timeout".into()))
            }
            Err(e) if e.kind() == ErrorKind::Interrupted => Ok(()),
            Err(e) => Err(RspError::from(e)),
        }
    }

    /// Next item from the stream, blocking. Framing errors are returned after
    /// their bytes are consumed so the caller can answer with a Nak.
    pub fn next_item(&mut self, rle: bool) -> Result<Parsed, RspError> {
        loop {
            let (item, used) = if rle {
                codec::parse(&self.buf)
            } else {
                codec::parse_command(&self.buf)
            };
            self.buf.drain(..used);
            match item {
                Ok(Parsed::Incomplete) => self.fill()?,
                other => return other,
            }
        }
    }

    /// True if an interrupt byte is waiting, without blocking. Other pending
    /// bytes stay buffered.
    pub fn interrupt_pending(&mut self) -> Result<bool, RspError> {
        if self.buf.first() == Some(&codec::INTERRUPT) {
            self.buf.remove(0);
            return Ok(true);
        }
        self.stream.set_nonblocking(true).map_err(RspError::from)?;
        let mut chunk = [0u8; 256];
        let read = self.stream.read(&mut chunk);
        self.stream.set_nonblocking(false).map_err(RspError::from)?;
        match read {
            Ok(0) => Err(RspError::ProtocolTimeout("connection closed".into())),
            Ok(n) => {
                if let Some(t) = self.transcript.as_mut() {
                    t.record(Direction::Received, &chunk[..n]);
                }
                self.buf.extend_from_slice(&chunk[..n]);
                if self.buf.first() == Some(&codec::INTERRUPT) {
                    self.buf.remove(0);
                    return Ok(true);
                }
                Ok(false)
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => Ok(false),
            Err(e) => Err(RspError::from(e)),
        }
    }
}
