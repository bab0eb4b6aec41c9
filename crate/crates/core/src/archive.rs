//! Versioned binary container for named f64 tensors plus a JSON record.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "PCLMARCH"
//! version    u32
//! kind       u32 length + UTF-8
//! metadata   u64 length + UTF-8 JSON
//! count      u32
//! tensors    count x { u32 name length, name, u64 rows, u64 cols, rows*cols f64 }
//! ```
//!
//! Values are stored bit-for-bit, so a reload reproduces every tensor exactly.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

use crate::lm::params::Mat;

pub const MAGIC: &[u8; 8] = b"PCLMARCH";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an archive (bad magic)")]
    BadMagic,
    #[error("unsupported archive version {0}")]
    UnsupportedVersion(u32),
    #[error("expected archive kind {expected:?}, found {found:?}")]
    WrongKind { expected: String, found: String },
    #[error("corrupt archive: {0}")]
    Corrupt(String),
    #[error("metadata: {0}")]
    Metadata(#[from] serde_json::Error),
    #[error("missing tensor {0}")]
    MissingTensor(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub kind: String,
    pub metadata: serde_json::Value,
    pub tensors: Vec<(String, Mat)>,
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string(r: &mut impl Read, len: usize) -> Result<String, ArchiveError> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| ArchiveError::Corrupt(e.to_string()))
}

impl Archive {
    pub fn new(kind: impl Into<String>, metadata: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            metadata,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Mat) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn tensor(&self, name: &str) -> Result<&Mat, ArchiveError> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| ArchiveError::MissingTensor(name.to_string()))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), ArchiveError> {
        if self.kind != kind {
            return Err(ArchiveError::WrongKind {
                expected: kind.to_string(),
                found: self.kind.clone(),
            });
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), ArchiveError> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.kind.len() as u32).to_le_bytes())?;
        w.write_all(self.kind.as_bytes())?;
        let meta = serde_json::to_vec(&self.metadata)?;
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(&meta)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, m) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(m.nrows() as u64).to_le_bytes())?;
            w.write_all(&(m.ncols() as u64).to_le_bytes())?;
            for v in m.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, ArchiveError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ArchiveError::BadMagic);
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(ArchiveError::UnsupportedVersion(version));
        }
        let kind_len = read_u32(r)? as usize;
        let kind = read_string(r, kind_len)?;
        let meta_len = read_u64(r)? as usize;
        let meta = read_string(r, meta_len)?;
        let metadata = serde_json::from_str(&meta)?;
        let count = read_u32(r)?;
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            let name = read_string(r, name_len)?;
            let rows = read_u64(r)? as usize;
            let cols = read_u64(r)? as usize;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| ArchiveError::Corrupt(format!("tensor {name} too large")))?;
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes)?;
            let data: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let m = Array2::from_shape_vec((rows, cols), data).map_err(|e| ArchiveError::Corrupt(e.to_string()))?;
            tensors.push((name, m));
        }
        Ok(Self {
            kind,
            metadata,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ArchiveError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ArchiveError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}
