use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::MemoryImage;

#[derive(Debug, Error)]
pub enum ProgramError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("program image is empty")]
    Empty,
    #[error("entry point {0:#010x} is outside the image or unaligned")]
    BadEntry(u32),
    #[error("reading program: {0}")]
    Io(#[from] std::io::Error),
}

/// A loadable program: a memory image, the entry pc and the exit address.
///
/// A run completes when execution reaches `exit` (by default the end of the
/// image, i.e. falling off the last instruction).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub name: String,
    pub image: MemoryImage,
    pub entry: u32,
    pub exit: u32,
}

/// Stable identity of a program.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProgramId {
    pub name: String,
    /// Hex SHA-256 over the image, base, entry and exit.
    pub digest: String,
}

impl fmt::Display for ProgramId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.name, &self.digest[..12.min(self.digest.len())])
    }
}

impl Program {
    pub fn new(name: impl Into<String>, image: MemoryImage, entry: u32) -> Result<Self, ProgramError> {
        if image.is_empty() {
            return Err(ProgramError::Empty);
        }
        if !entry.is_multiple_of(4) || !image.contains(entry, 4) {
            return Err(ProgramError::BadEntry(entry));
        }
        let exit = image.end().min(u32::MAX as u64) as u32;
        Ok(Program {
            name: name.into(),
            image,
            entry,
            exit,
        })
    }

    /// Program whose code is `words` at `base`, entered at `base`.
    pub fn from_words(name: impl Into<String>, base: u32, words: &[u32]) -> Result<Self, ProgramError> {
        Program::new(name, MemoryImage::from_words(base, words), base)
    }

    pub fn with_exit(mut self, exit: u32) -> Self {
        self.exit = exit;
        self
    }

    /// Parses a hex listing: one 8-digit word per line, `#` starts a comment.
    pub fn from_hex_listing(name: impl Into<String>, base: u32, text: &str) -> Result<Self, ProgramError> {
        let mut words = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.len() != 8 || !line.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(ProgramError::Parse {
                    line: i + 1,
                    message: format!("expected 8 hex digits, found {line:?}"),
                });
            }
            words.push(u32::from_str_radix(line, 16).expect("validated hex"));
        }
        Program::from_words(name, base, &words)
    }

    /// Loads a program file. Files ending in `.hex` or `.txt` are hex
    /// listings, anything else is a flat binary image.
    pub fn load(path: &Path, base: u32) -> Result<Self, ProgramError> {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if ext.eq_ignore_ascii_case("hex") || ext.eq_ignore_ascii_case("txt") {
            let text = std::fs::read_to_string(path)?;
            Program::from_hex_listing(name, base, &text)
        } else {
            let bytes = std::fs::read(path)?;
            Program::new(name, MemoryImage::new(base, bytes), base)
        }
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"lockstep-program-v1\0");
        h.update(self.image.base().to_le_bytes());
        h.update(self.entry.to_le_bytes());
        h.update(self.exit.to_le_bytes());
        h.update(self.image.bytes());
        hex::encode(h.finalize())
    }

    pub fn id(&self) -> ProgramId {
        ProgramId {
            name: self.name.clone(),
            digest: self.digest(),
        }
    }

    /// Renders the image as a hex listing that [`Program::from_hex_listing`]
    /// reads back. Trailing partial words are zero padded.
    pub fn to_hex_listing(&self) -> String {
        let mut out = format!(
            "# {} base={:#010x} entry={:#010x} exit={:#010x}\n",
            self.name,
            self.image.base(),
            self.entry,
            self.exit
        );
        for chunk in self.image.bytes().chunks(4) {
            let mut b = [0u8; 4];
            b[..chunk.len()].copy_from_slice(chunk);
            out.push_str(&format!("{:08x}\n", u32::from_le_bytes(b)));
        }
        out
    }
}
