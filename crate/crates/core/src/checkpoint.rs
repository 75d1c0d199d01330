//! Flat binary container for named f64 tensors.
//!
//! Layout: magic `"TRL3D\0"`, format version (u32 LE), then one record per
//! tensor: name length (u32 LE), UTF-8 name, rank (u32 LE), extents
//! (u64 LE each), row-major f64 payload (LE). Records run to end of file.
//! Loaders reject unknown versions and any truncated or oversized record.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 6] = b"TRL3D\0";
pub const FORMAT_VERSION: u32 = 1;

const MAX_NAME_LEN: usize = 1 << 16;
const MAX_RANK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn to_bytes(entries: &[Entry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Vec<Entry>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(MAGIC.len())?;
    if magic != MAGIC {
        return Err(Error::Corrupt("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let mut entries = Vec::new();
    while cur.pos < bytes.len() {
        let name_len = cur.u32()? as usize;
        if name_len > MAX_NAME_LEN {
            return Err(Error::Corrupt(format!("name length {name_len} too large")));
        }
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Corrupt("name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u32()? as usize;
        if rank > MAX_RANK {
            return Err(Error::Corrupt(format!("rank {rank} too large")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut count: usize = 1;
        for _ in 0..rank {
            let d = cur.u64()?;
            let d = usize::try_from(d).map_err(|_| Error::Corrupt("extent overflow".into()))?;
            count = count
                .checked_mul(d)
                .ok_or_else(|| Error::Corrupt("extent product overflow".into()))?;
            shape.push(d);
        }
        let payload_bytes = count
            .checked_mul(8)
            .ok_or_else(|| Error::Corrupt("payload size overflow".into()))?;
        if bytes.len() - cur.pos < payload_bytes {
            return Err(Error::Corrupt(format!(
                "truncated payload for '{name}': need {payload_bytes} bytes, have {}",
                bytes.len() - cur.pos
            )));
        }
        let raw = cur.take(payload_bytes)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push(Entry { name, shape, data });
    }
    Ok(entries)
}

pub fn save(path: &Path, entries: &[Entry]) -> Result<()> {
    fs::write(path, to_bytes(entries))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<Entry>> {
    from_bytes(&fs::read(path)?)
}

/// Snapshot named parameters into entries, in the given order.
pub fn entries_from_params(params: &[(String, Tensor)]) -> Vec<Entry> {
    params
        .iter()
        .map(|(name, t)| Entry {
            name: name.clone(),
            shape: t.shape(),
            data: t.to_vec(),
        })
        .collect()
}

/// Write loaded entries back into matching named parameters. Every
/// parameter must be present with an identical shape.
pub fn restore_params(entries: &[Entry], params: &[(String, Tensor)]) -> Result<()> {
    for (name, t) in params {
        let e = entries
            .iter()
            .find(|e| &e.name == name)
            .ok_or_else(|| Error::Corrupt(format!("missing parameter '{name}'")))?;
        if e.shape != t.shape() {
            return Err(Error::Corrupt(format!(
                "shape mismatch for '{name}': checkpoint {:?} vs model {:?}",
                e.shape,
                t.shape()
            )));
        }
        t.set_data(&e.data)?;
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Corrupt(format!(
                "truncated record at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
