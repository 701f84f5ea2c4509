//! Flat binary tensor archives with a self-describing header.
//!
//! One layout serves encoder checkpoints, memory-bank snapshots and
//! generated embedding matrices, so any artifact can be diffed or
//! reloaded with the same code path. Layout, all little-endian:
//!
//! ```text
//! magic  b"FTNS"            4 bytes
//! version u32               currently 1
//! count  u32                number of tensors
//! per tensor:
//!   name_len u32, name bytes (utf-8)
//!   ndim u32, dims u64 * ndim
//!   data f64 * product(dims)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

const MAGIC: &[u8; 4] = b"FTNS";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TensorFileError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes (not a tensor archive)")]
    BadMagic,
    #[error("unsupported archive version {0}")]
    BadVersion(u32),
    #[error("archive truncated while reading {0}")]
    Truncated(String),
    #[error("tensor {0} not present in archive")]
    MissingTensor(String),
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

/// One named tensor: shape plus row-major data.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// An ordered set of named tensors that serializes to the flat layout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    entries: BTreeMap<String, TensorEntry>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries
            .insert(name.to_string(), TensorEntry { shape, data });
    }

    pub fn get(&self, name: &str) -> Result<&TensorEntry, TensorFileError> {
        self.entries
            .get(name)
            .ok_or_else(|| TensorFileError::MissingTensor(name.to_string()))
    }

    /// Fetch a tensor and check its shape in one step.
    pub fn get_shaped(&self, name: &str, shape: &[usize]) -> Result<&TensorEntry, TensorFileError> {
        let entry = self.get(name)?;
        if entry.shape != shape {
            return Err(TensorFileError::ShapeMismatch {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: entry.shape.clone(),
            });
        }
        Ok(entry)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), TensorFileError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, entry) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(entry.shape.len() as u32).to_le_bytes())?;
            for &d in &entry.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in &entry.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, TensorFileError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| TensorFileError::Truncated("magic".into()))?;
        if &magic != MAGIC {
            return Err(TensorFileError::BadMagic);
        }
        let version = read_u32(&mut r, "version")?;
        if version != VERSION {
            return Err(TensorFileError::BadVersion(version));
        }
        let count = read_u32(&mut r, "count")?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r, "name length")? as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)
                .map_err(|_| TensorFileError::Truncated("name".into()))?;
            let name = String::from_utf8_lossy(&name_buf).into_owned();
            let ndim = read_u32(&mut r, "ndim")? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf)
                    .map_err(|_| TensorFileError::Truncated(format!("{name} dims")))?;
                shape.push(u64::from_le_bytes(buf) as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf)
                    .map_err(|_| TensorFileError::Truncated(format!("{name} data")))?;
                data.push(f64::from_le_bytes(buf));
            }
            entries.insert(name, TensorEntry { shape, data });
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), TensorFileError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TensorFileError> {
        let bytes = fs::read(path)?;
        Self::read_from(&bytes[..])
    }

    /// Per-tensor summary lines for textual diffing of checkpoints.
    ///
    /// Values are formatted with shortest round-trip notation, so equal
    /// archives always yield byte-equal digests.
    pub fn digest(&self) -> String {
        let mut out = String::new();
        for (name, entry) in &self.entries {
            let n = entry.data.len();
            let sum: f64 = entry.data.iter().sum();
            let sq: f64 = entry.data.iter().map(|v| v * v).sum();
            let min = entry.data.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = entry.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let dims: Vec<String> = entry.shape.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(
                out,
                "{} shape=[{}] n={} sum={} l2={} min={} max={}",
                name,
                dims.join("x"),
                n,
                sum,
                sq.sqrt(),
                min,
                max
            );
        }
        out
    }
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32, TensorFileError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| TensorFileError::Truncated(what.to_string()))?;
    Ok(u32::from_le_bytes(buf))
}
