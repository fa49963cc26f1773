//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "GDPC"            4 bytes magic
//! version           u32 (currently 1)
//! records, each:
//!   name_len        u32
//!   name            name_len bytes, UTF-8
//!   rank            u32
//!   dims            rank x u32
//!   data            prod(dims) x f32, row-major
//! crc32             u32, IEEE CRC-32 of every preceding byte
//! ```
//!
//! Records run until exactly four bytes (the checksum) remain.

use ndarray::Array2;

use super::{ParameterStore, Real};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GDPC";
pub const VERSION: u32 = 1;
const MAX_RANK: usize = 8;
const MAX_NAME: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode_records(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
        for &d in &r.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format("checkpoint", "truncated record"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode_records(bytes: &[u8]) -> Result<Vec<Record>> {
    if bytes.len() < 12 {
        return Err(Error::format("checkpoint", "file too short"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::format("checkpoint", "checksum mismatch"));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(
            "checkpoint",
            format!("unsupported version {version}"),
        ));
    }
    let mut records = Vec::new();
    while r.remaining() > 0 {
        let name_len = r.u32()? as usize;
        if name_len > MAX_NAME {
            return Err(Error::format("checkpoint", "name too long"));
        }
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::format("checkpoint", "name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        if rank > MAX_RANK {
            return Err(Error::format(
                "checkpoint",
                format!("rank {rank} too large"),
            ));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut count: usize = 1;
        for _ in 0..rank {
            let d = r.u32()? as usize;
            count = count
                .checked_mul(d)
                .ok_or_else(|| Error::format("checkpoint", "shape overflows"))?;
            shape.push(d);
        }
        let nbytes = count
            .checked_mul(4)
            .filter(|&n| n <= r.remaining())
            .ok_or_else(|| {
                Error::format("checkpoint", format!("record '{name}' data truncated"))
            })?;
        let data = r
            .take(nbytes)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        records.push(Record { name, shape, data });
    }
    Ok(records)
}

pub fn records_from_store<T: Real>(store: &ParameterStore<T>) -> Vec<Record> {
    store
        .iter()
        .map(|p| Record {
            name: p.name.clone(),
            shape: p.shape.clone(),
            data: p.value.iter().map(|v| v.as_f64() as f32).collect(),
        })
        .collect()
}

/// Copies record values into an existing store; names and shapes must
/// match one-to-one.
pub fn load_into_store<T: Real>(store: &mut ParameterStore<T>, records: &[Record]) -> Result<()> {
    if records.len() != store.len() {
        return Err(Error::format(
            "checkpoint",
            format!("{} records for {} parameters", records.len(), store.len()),
        ));
    }
    for r in records {
        let i = store.index_of(&r.name)?;
        let p = store.by_index_mut(i);
        if p.shape != r.shape {
            return Err(Error::format(
                "checkpoint",
                format!(
                    "'{}' has shape {:?}, expected {:?}",
                    r.name, r.shape, p.shape
                ),
            ));
        }
        let dim = p.value.raw_dim();
        p.value = Array2::from_shape_vec(dim, r.data.iter().map(|&v| T::of(v as f64)).collect())
            .expect("length checked by shape");
    }
    store.touch();
    Ok(())
}

pub fn save<T: Real>(store: &ParameterStore<T>, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, encode_records(&records_from_store(store)))
        .map_err(|e| Error::path(path, e))
}

pub fn load<T: Real>(store: &mut ParameterStore<T>, path: &std::path::Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::path(path, e))?;
    load_into_store(store, &decode_records(&bytes)?)
}
