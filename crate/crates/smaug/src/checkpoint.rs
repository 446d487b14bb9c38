//! Versioned binary parameter snapshots.
//!
//! Layout: magic `SMAUGCKPT`, format version (u32 LE), then per parameter:
//! name length (u32 LE), UTF-8 name, rank (u32 LE), dims (u64 LE each) and
//! the values as little-endian f32.

use std::path::Path;

use smaug_core::numerics::{ParamStore, Tensor};

pub const MAGIC: &[u8; 9] = b"SMAUGCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("parameter name is not UTF-8")]
    Name,
    #[error("parameter {name}: {reason}")]
    Mismatch { name: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A named tensor as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn encode(entries: &[Entry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &e.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() < n {
            return Err(CheckpointError::Truncated(what));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Entry>, CheckpointError> {
    let mut r = Reader { buf: bytes };
    if r.take(MAGIC.len(), "magic").map_err(|_| CheckpointError::Magic)? != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let mut entries = Vec::new();
    while !r.buf.is_empty() {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?).map_err(|_| CheckpointError::Name)?.to_string();
        let rank = r.u32("rank")? as usize;
        let shape = (0..rank).map(|_| r.u64("shape").map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= r.buf.len()))
            .ok_or(CheckpointError::Truncated("values"))?;
        let values = r
            .take(count * 4, "values")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        entries.push(Entry { name, shape, values });
    }
    Ok(entries)
}

pub fn entries_of(store: &ParamStore<f32>) -> Vec<Entry> {
    store
        .iter()
        .map(|p| Entry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            values: p.value.data().to_vec(),
        })
        .collect()
}

/// Overwrites every parameter of `store` from `entries`. The two sets of
/// names and shapes must match exactly.
pub fn restore(store: &mut ParamStore<f32>, entries: &[Entry]) -> Result<(), CheckpointError> {
    if let Some(p) = store.iter().find(|p| !entries.iter().any(|e| e.name == p.name)) {
        return Err(CheckpointError::Mismatch {
            name: p.name.clone(),
            reason: "missing from checkpoint".into(),
        });
    }
    for e in entries {
        let id = store.find(&e.name).ok_or_else(|| CheckpointError::Mismatch {
            name: e.name.clone(),
            reason: "not part of the configured networks".into(),
        })?;
        let expected = store.value(id).shape().to_vec();
        if expected != e.shape {
            return Err(CheckpointError::Mismatch {
                name: e.name.clone(),
                reason: format!("shape {:?} in checkpoint, {:?} expected", e.shape, expected),
            });
        }
        *store.value_mut(id) = Tensor::new(e.shape.clone(), e.values.clone()).map_err(|err| CheckpointError::Mismatch {
            name: e.name.clone(),
            reason: err.to_string(),
        })?;
    }
    Ok(())
}

pub fn save(path: &Path, store: &ParamStore<f32>) -> std::io::Result<()> {
    crate::io::write_atomic(path, &encode(&entries_of(store)))
}

pub fn load(path: &Path) -> Result<Vec<Entry>, CheckpointError> {
    decode(&std::fs::read(path)?)
}
