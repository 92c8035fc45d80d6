//! Adapter container. Layout (all integers little-endian):
//!
//! | bytes          | content                                         |
//! |----------------|-------------------------------------------------|
//! | 8              | magic `PTRLORA\n`                               |
//! | 4              | format version, `u32` (currently 1)             |
//! | 4              | header length `L`, `u32`                        |
//! | L              | UTF-8 JSON header                               |
//! | rest           | per header tensor, in order: A then B, row-major `f64` |
//!
//! The header is `{"id", "rank", "scale", "metadata", "tensors": [{"name", "d_out", "d_in"}]}`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{AdapterMetadata, LoraAdapter, LoraFactors};
use crate::error::{Error, Result};

pub const ADAPTER_MAGIC: [u8; 8] = *b"PTRLORA\n";
pub const ADAPTER_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    id: String,
    rank: usize,
    scale: f64,
    metadata: AdapterMetadata,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    d_out: usize,
    d_in: usize,
}

fn push_row_major(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
}

pub fn write_adapter(adapter: &LoraAdapter) -> Result<Vec<u8>> {
    adapter.validate()?;
    let header = Header {
        id: adapter.id.clone(),
        rank: adapter.rank,
        scale: adapter.scale,
        metadata: adapter.metadata.clone(),
        tensors: adapter.tensors.iter().map(|(name, f)| TensorEntry { name: name.clone(), d_out: f.b.nrows(), d_in: f.a.ncols() }).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(&ADAPTER_MAGIC);
    out.extend_from_slice(&ADAPTER_VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(json.len()).map_err(|_| Error::Format("adapter header too large".into()))?.to_le_bytes());
    out.extend_from_slice(&json);
    for f in adapter.tensors.values() {
        push_row_major(&mut out, &f.a);
        push_row_major(&mut out, &f.b);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Format("adapter file is truncated".into()));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let len = rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or_else(|| Error::Format("tensor too large".into()))?;
        let raw = self.take(len)?;
        let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(DMatrix::from_row_slice(rows, cols, &values))
    }
}

pub fn read_adapter(bytes: &[u8]) -> Result<LoraAdapter> {
    let mut r = Reader { bytes };
    if r.take(8)? != ADAPTER_MAGIC {
        return Err(Error::Format("not an adapter file".into()));
    }
    let version = r.u32()?;
    if version != ADAPTER_VERSION {
        return Err(Error::Format(format!("unsupported adapter format version {version}")));
    }
    let len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| Error::Format(format!("bad adapter header: {e}")))?;
    let mut tensors = BTreeMap::new();
    for t in &header.tensors {
        let a = r.matrix(header.rank, t.d_in)?;
        let b = r.matrix(t.d_out, header.rank)?;
        if tensors.insert(t.name.clone(), LoraFactors { a, b }).is_some() {
            return Err(Error::Format(format!("tensor `{}` appears twice", t.name)));
        }
    }
    if !r.bytes.is_empty() {
        return Err(Error::Format("trailing bytes after adapter payload".into()));
    }
    LoraAdapter::new(header.id, header.rank, header.scale, tensors, header.metadata)
}

pub fn write_adapter_file(path: &Path, adapter: &LoraAdapter) -> Result<()> {
    std::fs::write(path, write_adapter(adapter)?)?;
    Ok(())
}

pub fn read_adapter_file(path: &Path) -> Result<LoraAdapter> {
    read_adapter(&std::fs::read(path)?)
}
