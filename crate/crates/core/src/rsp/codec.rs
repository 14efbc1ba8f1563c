//! Packet framing.
//!
//! A frame is `$` + escaped body + `#` + two lowercase hex digits. The
//! checksum is the byte sum of the escaped body. `#`, `$`, `}` and `*` are
//! escaped as `}` followed by the byte xor 0x20; `*` is included because an
//! unescaped `*` in a reply would read as a run-length marker. Run-length
//! encoding is only ever decoded, on replies, never produced.

use super::RspError;

pub const ACK: u8 = b'+';
pub const NAK: u8 = b'-';
/// Out-of-band interrupt request (Ctrl-C) sent by a client.
pub const INTERRUPT: u8 = 0x03;

const ESCAPE: u8 = b'}';
const RLE: u8 = b'*';

fn needs_escape(b: u8) -> bool {
    matches!(b, b'#' | b'$' | ESCAPE | RLE)
}

pub fn checksum(body: &[u8]) -> u8 {
    body.iter().fold(0u8, |s, b| s.wrapping_add(*b))
}

/// Frames `payload` for the wire.
pub fn frame(payload: &[u8]) -> Vec<u8> {
    let mut body = Vec::with_capacity(payload.len() + 4);
    for &b in payload {
        if needs_escape(b) {
            body.push(ESCAPE);
            body.push(b ^ 0x20);
        } else {
            body.push(b);
        }
    }
    let mut out = Vec::with_capacity(body.len() + 4);
    out.push(b'$');
    out.extend_from_slice(&body);
    out.push(b'#');
    out.extend_from_slice(format!("{:02x}", checksum(&body)).as_bytes());
    out
}

/// One item read off the stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Parsed {
    /// A packet with its payload unescaped.
    Packet(Vec<u8>),
    Ack,
    Nak,
    Interrupt,
    /// More bytes are needed.
    Incomplete,
}

/// Parses the first item in `buf` as a reply (run-length runs expanded).
///
/// Returns the item and the number of bytes consumed; on error the consumed
/// count skips past the offending frame or byte.
pub fn parse(buf: &[u8]) -> (Result<Parsed, RspError>, usize) {
    parse_with(buf, true)
}

/// Parses the first item in `buf` as a command (no run-length decoding).
pub fn parse_command(buf: &[u8]) -> (Result<Parsed, RspError>, usize) {
    parse_with(buf, false)
}

fn parse_with(buf: &[u8], rle: bool) -> (Result<Parsed, RspError>, usize) {
    let Some(&first) = buf.first() else {
        return (Ok(Parsed::Incomplete), 0);
    };
    match first {
        ACK => return (Ok(Parsed::Ack), 1),
        NAK => return (Ok(Parsed::Nak), 1),
        INTERRUPT => return (Ok(Parsed::Interrupt), 1),
        b'$' => {}
        other => {
            return (
                Err(RspError::MalformedFrame(format!(
                    "unexpected byte {other:#04x} outside a frame"
                ))),
                1,
            )
        }
    }
    let Some(hash) = buf.iter().position(|&b| b == b'#') else {
        return (Ok(Parsed::Incomplete), 0);
    };
    if buf.len() < hash + 3 {
        return (Ok(Parsed::Incomplete), 0);
    }
    let consumed = hash + 3;
    let body = &buf[1..hash];
    if let Some(pos) = body.iter().position(|&b| b == b'$') {
        // A new frame started before this one ended; resynchronise on it.
        return (
            Err(RspError::MalformedFrame("frame restarted before checksum".into())),
            pos + 1,
        );
    }
    let digits = &buf[hash + 1..consumed];
    let got = match std::str::from_utf8(digits)
        .ok()
        .and_then(|s| u8::from_str_radix(s, 16).ok())
    {
        Some(v) => v,
        None => {
            return (
                Err(RspError::MalformedFrame("checksum is not two hex digits".into())),
                consumed,
            )
        }
    };
    let expected = checksum(body);
    if expected != got {
        return (Err(RspError::BadChecksum { expected, got }), consumed);
    }
    (decode_body(body, rle).map(Parsed::Packet), consumed)
}

fn decode_body(body: &[u8], rle: bool) -> Result<Vec<u8>, RspError> {
    let mut out = Vec::with_capacity(body.len());
    let mut i = 0;
    while i < body.len() {
        let b = body[i];
        match b {
            ESCAPE => {
                let next = *body
                    .get(i + 1)
                    .ok_or_else(|| RspError::MalformedFrame("dangling escape".into()))?;
                out.push(next ^ 0x20);
                i += 2;
            }
            RLE if rle => {
                let count = *body
                    .get(i + 1)
                    .ok_or_else(|| RspError::MalformedFrame("dangling run length".into()))?;
                let last = *out
                    .last()
                    .ok_or_else(|| RspError::MalformedFrame("run length with nothing to repeat".into()))?;
                if count < 29 {
                    return Err(RspError::MalformedFrame(format!(
                        "bad run length byte {count:#04x}"
                    )));
                }
                out.extend(std::iter::repeat_n(last, (count - 29) as usize));
                i += 2;
            }
            _ => {
                out.push(b);
                i += 1;
            }
        }
    }
    Ok(out)
}
