//! Binary artifact framing: magic, version, little-endian payload and a
//! trailing SHA-256 checksum over everything before it.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const VERSION: u32 = 1;

pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 8]) -> Self {
        let mut buf = Vec::with_capacity(1 << 16);
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        Writer { buf }
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        self.buf.reserve(vs.len() * 8);
        for v in vs {
            self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }

    pub fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn usizes(&mut self, vs: &[usize]) {
        self.u64(vs.len() as u64);
        for &v in vs {
            self.buf.extend_from_slice(&(v as u64).to_le_bytes());
        }
    }

    pub fn into_bytes(mut self) -> Vec<u8> {
        let digest = Sha256::digest(&self.buf);
        self.buf.extend_from_slice(&digest);
        self.buf
    }

    pub fn write(self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.into_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub struct Reader {
    buf: Vec<u8>,
    pos: usize,
    end: usize,
    path: PathBuf,
}

impl Reader {
    pub fn open(path: impl AsRef<Path>, magic: &[u8; 8]) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Reader::from_bytes(buf, path, magic)
    }

    pub fn from_bytes(buf: Vec<u8>, path: &Path, magic: &[u8; 8]) -> Result<Self> {
        let corrupt = |reason: &str| Error::Corrupted { path: path.to_path_buf(), reason: reason.into() };
        if buf.len() < 8 + 4 + 32 {
            return Err(corrupt("file too short"));
        }
        let end = buf.len() - 32;
        if Sha256::digest(&buf[..end]).as_slice() != &buf[end..] {
            return Err(corrupt("checksum mismatch"));
        }
        if &buf[..8] != magic {
            return Err(corrupt("wrong magic"));
        }
        let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::StaleArtifact {
                path: path.to_path_buf(),
                reason: format!("format version {version}, expected {VERSION}"),
            });
        }
        Ok(Reader { buf, pos: 12, end, path: path.to_path_buf() })
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.end {
            return Err(Error::Corrupted { path: self.path.clone(), reason: "truncated payload".into() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let bytes = self.take(n.saturating_mul(8))?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap()))).collect())
    }

    pub fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.u64()? as usize;
        let bytes = self.take(n.saturating_mul(8))?;
        Ok(bytes.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize).collect())
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u64()? as usize;
        let bytes = self.take(n)?.to_vec();
        String::from_utf8(bytes)
            .map_err(|_| Error::Corrupted { path: self.path.clone(), reason: "invalid utf-8".into() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.end {
            return Err(Error::Corrupted { path: self.path.clone(), reason: "trailing bytes".into() });
        }
        Ok(())
    }
}
