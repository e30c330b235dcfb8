//! Little-endian binary containers shared by the clip-set, codebook and checkpoint files.
//!
//! Every container is laid out as
//!
//! ```text
//! magic: [u8; 4]
//! format_version: u32
//! body: container specific
//! checksum: [u8; 32]   SHA-256 over every preceding byte
//! ```
//!
//! Strings are `u32` byte length followed by UTF-8 bytes; floats are IEEE-754 `f64`.

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("file truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("checksum mismatch")]
    Checksum,
    #[error("invalid content: {0}")]
    Invalid(String),
}

pub const CHECKSUM_LEN: usize = 32;

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().into()
}

pub fn hex32(d: &[u8; 32]) -> String {
    d.iter().map(|b| format!("{b:02x}")).collect()
}

/// Stable 64-bit seed derived from arbitrary labelled parts.
pub fn derive_seed(parts: &[&dyn std::fmt::Display]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.to_string().as_bytes());
        h.update([0x1f]);
    }
    let d: [u8; 32] = h.finalize().into();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

pub struct BinWriter {
    buf: Vec<u8>,
}

impl BinWriter {
    pub fn new(magic: [u8; 4], version: u32) -> Self {
        let mut w = Self { buf: Vec::new() };
        w.buf.extend_from_slice(&magic);
        w.put_u32(version);
        w
    }

    /// A headerless writer for nested records.
    pub fn raw() -> Self {
        Self { buf: Vec::new() }
    }

    pub fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn put_i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn put_f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn put_f64s(&mut self, v: &[f64]) {
        for x in v {
            self.put_f64(*x);
        }
    }
    pub fn put_bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }
    pub fn put_str(&mut self, s: &str) {
        self.put_u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    /// Length-prefixed (u64) record.
    pub fn put_record(&mut self, rec: &[u8]) {
        self.put_u64(rec.len() as u64);
        self.buf.extend_from_slice(rec);
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }

    /// Appends the trailing checksum and returns the finished bytes.
    pub fn finish(mut self) -> Vec<u8> {
        let d = sha256(&self.buf);
        self.buf.extend_from_slice(&d);
        self.buf
    }
}

pub struct BinReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> BinReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    /// Validates magic, version and checksum, returning a reader positioned after the version
    /// and bounded before the checksum.
    pub fn open(data: &'a [u8], magic: [u8; 4], version: u32) -> Result<Self, FormatError> {
        if data.len() < 8 {
            return Err(FormatError::Truncated { offset: data.len(), needed: 8 - data.len() });
        }
        let found: [u8; 4] = data[..4].try_into().unwrap();
        if found != magic {
            return Err(FormatError::BadMagic { expected: magic, found });
        }
        let v = u32::from_le_bytes(data[4..8].try_into().unwrap());
        if v != version {
            return Err(FormatError::Version { found: v, expected: version });
        }
        if data.len() < 8 + CHECKSUM_LEN {
            return Err(FormatError::Truncated {
                offset: data.len(),
                needed: 8 + CHECKSUM_LEN - data.len(),
            });
        }
        let split = data.len() - CHECKSUM_LEN;
        if sha256(&data[..split]) != data[split..] {
            return Err(FormatError::Checksum);
        }
        Ok(Self { data: &data[..split], pos: 8 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.pos + n > self.data.len() {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: self.pos + n - self.data.len(),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }
    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn i64(&mut self) -> Result<i64, FormatError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>, FormatError> {
        let raw = self.take(n.checked_mul(8).ok_or(FormatError::Invalid("length overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        self.take(n)
    }
    pub fn str(&mut self) -> Result<String, FormatError> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|e| FormatError::Invalid(e.to_string()))
    }
    pub fn record(&mut self) -> Result<BinReader<'a>, FormatError> {
        let n = self.u64()? as usize;
        Ok(BinReader::new(self.take(n)?))
    }
    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }
    pub fn expect_end(&self) -> Result<(), FormatError> {
        if self.remaining() != 0 {
            return Err(FormatError::Invalid(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| FormatError::Io { path: parent.display().to_string(), source: e })?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| FormatError::Io { path: path.display().to_string(), source: e })
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, FormatError> {
    std::fs::read(path).map_err(|e| FormatError::Io { path: path.display().to_string(), source: e })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip_and_failures() {
        let mut w = BinWriter::new(*b"TEST", 3);
        w.put_str("hello");
        w.put_f64(1.5);
        let bytes = w.finish();
        let mut r = BinReader::open(&bytes, *b"TEST", 3).unwrap();
        assert_eq!(r.str().unwrap(), "hello");
        assert_eq!(r.f64().unwrap(), 1.5);
        r.expect_end().unwrap();

        assert!(matches!(BinReader::open(&bytes, *b"TEST", 4), Err(FormatError::Version { found: 3, .. })));
        assert!(matches!(BinReader::open(&bytes[..bytes.len() - 5], *b"TEST", 3), Err(FormatError::Checksum)));
        let mut flipped = bytes.clone();
        flipped[10] ^= 1;
        assert!(matches!(BinReader::open(&flipped, *b"TEST", 3), Err(FormatError::Checksum)));
        assert!(matches!(BinReader::open(&bytes, *b"NOPE", 3), Err(FormatError::BadMagic { .. })));
    }

    #[test]
    fn derive_seed_is_stable_and_label_sensitive() {
        assert_eq!(derive_seed(&[&1u64, &"a"]), derive_seed(&[&1u64, &"a"]));
        assert_ne!(derive_seed(&[&1u64, &"a"]), derive_seed(&[&1u64, &"b"]));
        assert_ne!(derive_seed(&[&"1a"]), derive_seed(&[&1u64, &"a"]));
    }
}
