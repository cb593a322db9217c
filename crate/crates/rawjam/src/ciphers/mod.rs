//! Victim ciphers and the access-trace instrumentation they share.
//!
//! Both victims do their S-box lookups in a single 256-byte table that spans
//! four 64-byte cache lines. The table layout used throughout the crate:
//! line = `offset / 64`, column within the line = `offset % 64`, and 4-byte
//! word = `offset / 4` (64 words per table, 16 per line).

pub mod aes;
pub mod sm4;

use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

/// Size of the S-box table in bytes.
pub const TABLE_BYTES: usize = 256;
/// Cache line size in bytes.
pub const LINE_BYTES: usize = 64;
/// Conflict granularity of the channel: 4-byte words.
pub const WORD_BYTES: usize = 4;
/// Number of cache lines the table occupies.
pub const TABLE_LINES: usize = TABLE_BYTES / LINE_BYTES;
/// Number of 4-byte words in the table (the jam-word space).
pub const TABLE_WORDS: usize = TABLE_BYTES / WORD_BYTES;
/// Number of 4-byte words per cache line.
pub const WORDS_PER_LINE: usize = LINE_BYTES / WORD_BYTES;

/// Cache line holding a table byte offset.
#[inline]
pub fn line_of(offset: u8) -> u8 {
    offset / LINE_BYTES as u8
}

/// Table-wide 4-byte word index of a byte offset, in `0..64`.
#[inline]
pub fn word_of(offset: u8) -> u8 {
    offset / WORD_BYTES as u8
}

/// Column of a byte offset within its cache line.
#[inline]
pub fn column_of(offset: u8) -> u8 {
    offset % LINE_BYTES as u8
}

/// Which victim implementation produced a trace set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CipherId {
    /// AES-128 with the four-fetch constant-cache-profile S-box lookup.
    AesCt,
    /// SM4 with cache-normalizing S-box prefetch.
    Sm4Cn,
}

impl CipherId {
    pub fn as_u8(self) -> u8 {
        match self {
            CipherId::AesCt => 0,
            CipherId::Sm4Cn => 1,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(CipherId::AesCt),
            1 => Ok(CipherId::Sm4Cn),
            other => Err(Error::TraceFile(format!("unknown cipher id {other}"))),
        }
    }
}

impl fmt::Display for CipherId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CipherId::AesCt => write!(f, "aes-ct"),
            CipherId::Sm4Cn => write!(f, "sm4-cn"),
        }
    }
}

impl FromStr for CipherId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aes-ct" | "aes" => Ok(CipherId::AesCt),
            "sm4-cn" | "sm4" => Ok(CipherId::Sm4Cn),
            other => Err(Error::InvalidArgument(format!(
                "unknown cipher {other:?} (expected aes-ct or sm4-cn)"
            ))),
        }
    }
}

/// 128-bit master key, for either cipher.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct CipherKey([u8; 16]);

impl CipherKey {
    pub const fn new(bytes: [u8; 16]) -> Self {
        CipherKey(bytes)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s).map_err(|e| Error::InvalidKey(e.to_string()))?;
        let bytes: [u8; 16] = bytes
            .try_into()
            .map_err(|v: Vec<u8>| Error::InvalidKey(format!("expected 16 bytes, got {}", v.len())))?;
        Ok(CipherKey(bytes))
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }
}

impl fmt::Display for CipherKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", hex::encode(self.0))
    }
}

impl fmt::Debug for CipherKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CipherKey({})", hex::encode(self.0))
    }
}

impl FromStr for CipherKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CipherKey::from_hex(s)
    }
}

/// A 256-entry substitution table with the 4-line layout above.
#[derive(Clone)]
pub struct SboxTable {
    pub bytes: [u8; TABLE_BYTES],
}

impl SboxTable {
    pub const fn new(bytes: [u8; TABLE_BYTES]) -> Self {
        SboxTable { bytes }
    }

    /// One cache line of the table.
    pub fn line(&self, l: usize) -> &[u8] {
        &self.bytes[l * LINE_BYTES..(l + 1) * LINE_BYTES]
    }

    /// True when the table is a permutation of 0..=255.
    pub fn is_bijection(&self) -> bool {
        let mut seen = [false; TABLE_BYTES];
        for &b in &self.bytes {
            seen[b as usize] = true;
        }
        seen.iter().all(|&s| s)
    }
}

/// How a trace entry came to be.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntryKind {
    /// The fetch whose value the cipher actually consumes.
    Lookup,
    /// A companion fetch issued only to keep the cache profile constant.
    Dummy,
    /// Cache-warming access before the first round; timing-neutral.
    Prefetch,
}

/// One table access: a byte offset plus where in the cipher it happened.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    /// Byte offset into the 256-byte table.
    pub offset: u8,
    /// Round number; 0 for prefetches, 1-based otherwise.
    pub round: u8,
    /// State byte position (AES: 0..16; SM4: word byte 0..4, MSB first).
    pub position: u8,
    pub kind: EntryKind,
}

/// Ordered sequence of table byte offsets touched during one encryption.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AccessTrace {
    entries: Vec<TraceEntry>,
}

impl AccessTrace {
    pub fn new() -> Self {
        AccessTrace { entries: Vec::new() }
    }

    pub fn with_capacity(n: usize) -> Self {
        AccessTrace { entries: Vec::with_capacity(n) }
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn push(&mut self, entry: TraceEntry) {
        self.entries.push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TraceEntry> {
        self.entries.iter()
    }

    /// Cache-line index of every entry, in order.
    pub fn line_sequence(&self) -> Vec<u8> {
        self.entries.iter().map(|e| line_of(e.offset)).collect()
    }

    /// Intra-line column of every entry, in order.
    pub fn column_sequence(&self) -> Vec<u8> {
        self.entries.iter().map(|e| column_of(e.offset)).collect()
    }
}

impl<'a> IntoIterator for &'a AccessTrace {
    type Item = &'a TraceEntry;
    type IntoIter = std::slice::Iter<'a, TraceEntry>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}
