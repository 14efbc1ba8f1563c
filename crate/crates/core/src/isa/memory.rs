use serde::{Deserialize, Serialize};

use super::IsaError;

/// A flat little-endian memory image starting at `base`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemoryImage {
    base: u32,
    bytes: Vec<u8>,
}

impl MemoryImage {
    pub fn new(base: u32, bytes: Vec<u8>) -> Self {
        MemoryImage { base, bytes }
    }

    pub fn from_words(base: u32, words: &[u32]) -> Self {
        let bytes = words.iter().flat_map(|w| w.to_le_bytes()).collect();
        MemoryImage { base, bytes }
    }

    pub fn zeroed(base: u32, len: usize) -> Self {
        MemoryImage {
            base,
            bytes: vec![0; len],
        }
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    /// One past the last mapped address (saturating at the top of memory).
    pub fn end(&self) -> u64 {
        self.base as u64 + self.bytes.len() as u64
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn contains(&self, addr: u32, len: usize) -> bool {
        addr >= self.base && addr as u64 + len as u64 <= self.end()
    }

    fn offset(&self, addr: u32, len: usize) -> Result<usize, IsaError> {
        if self.contains(addr, len) {
            Ok((addr - self.base) as usize)
        } else {
            Err(IsaError::OutOfRangeAccess(addr))
        }
    }

    /// Aligned word read.
    pub fn read_word(&self, addr: u32) -> Result<u32, IsaError> {
        if !addr.is_multiple_of(4) {
            return Err(IsaError::UnalignedAccess(addr));
        }
        let off = self.offset(addr, 4)?;
        let mut b = [0u8; 4];
        b.copy_from_slice(&self.bytes[off..off + 4]);
        Ok(u32::from_le_bytes(b))
    }

    /// Checks that an aligned word write at `addr` would succeed.
    pub fn check_word(&self, addr: u32) -> Result<(), IsaError> {
        if !addr.is_multiple_of(4) {
            return Err(IsaError::UnalignedAccess(addr));
        }
        self.offset(addr, 4).map(|_| ())
    }

    pub fn write_word(&mut self, addr: u32, value: u32) -> Result<(), IsaError> {
        self.write_word_bytes(addr, value.to_le_bytes())
    }

    /// Writes four raw bytes at an aligned address.
    pub fn write_word_bytes(&mut self, addr: u32, bytes: [u8; 4]) -> Result<(), IsaError> {
        self.check_word(addr)?;
        let off = (addr - self.base) as usize;
        self.bytes[off..off + 4].copy_from_slice(&bytes);
        Ok(())
    }

    /// Byte-granular read, used by debugger memory access.
    pub fn read_bytes(&self, addr: u32, len: usize) -> Result<&[u8], IsaError> {
        let off = self.offset(addr, len)?;
        Ok(&self.bytes[off..off + len])
    }

    pub fn write_bytes(&mut self, addr: u32, data: &[u8]) -> Result<(), IsaError> {
        let off = self.offset(addr, data.len())?;
        self.bytes[off..off + data.len()].copy_from_slice(data);
        Ok(())
    }
}
