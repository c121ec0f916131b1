//! Named-tensor archive used for model checkpoints.
//!
//! Layout: magic `TNSRARC\0`, `u64` index length, a JSON index of
//! `{name, shape, dtype, offset, len}` entries, then the concatenated `TNSR`
//! blobs. Offsets are relative to the first byte after the index.

use std::collections::HashSet;
use std::path::Path;

use edeblur_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::{tnsr, Reader};
use crate::error::{CoreError, Result};

pub const MAGIC: &[u8; 8] = b"TNSRARC\0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    entries: Vec<(String, Tensor)>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces `name`, keeping insertion order.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = t,
            None => self.entries.push((name, t)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut index = Vec::with_capacity(self.entries.len());
        let mut payload = Vec::new();
        for (name, t) in &self.entries {
            let blob = tnsr::encode(t);
            index.push(IndexEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: "f32".into(),
                offset: payload.len() as u64,
                len: blob.len() as u64,
            });
            payload.extend_from_slice(&blob);
        }
        let index = serde_json::to_vec(&index).expect("index serializes");
        let mut out = Vec::with_capacity(16 + index.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(index.len() as u64).to_le_bytes());
        out.extend_from_slice(&index);
        out.extend_from_slice(&payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |detail: String| CoreError::format("checkpoint archive", detail);
        let mut r = Reader::new(bytes, "checkpoint archive");
        if r.take(8, "magic")? != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let index_len = r.u64("index length")?;
        if index_len > r.remaining() as u64 {
            return Err(bad(format!(
                "index length {index_len} exceeds the {} bytes present",
                r.remaining()
            )));
        }
        let index: Vec<IndexEntry> = serde_json::from_slice(r.take(index_len as usize, "index")?)
            .map_err(|e| bad(format!("index: {e}")))?;
        let payload = r.take(r.remaining(), "payload")?;
        let mut seen = HashSet::new();
        let mut entries = Vec::with_capacity(index.len());
        for e in index {
            if !seen.insert(e.name.clone()) {
                return Err(bad(format!("duplicate tensor name {:?}", e.name)));
            }
            if e.dtype != "f32" {
                return Err(bad(format!("{}: unsupported dtype {:?}", e.name, e.dtype)));
            }
            let blob = e
                .offset
                .checked_add(e.len)
                .filter(|&end| end <= payload.len() as u64)
                .map(|end| &payload[e.offset as usize..end as usize])
                .ok_or_else(|| bad(format!("{}: blob outside the payload", e.name)))?;
            let t = tnsr::decode(blob).map_err(|err| bad(format!("{}: {err}", e.name)))?;
            if t.shape() != e.shape.as_slice() {
                return Err(bad(format!(
                    "{}: index shape {:?} but blob shape {:?}",
                    e.name,
                    e.shape,
                    t.shape()
                )));
            }
            entries.push((e.name, t));
        }
        Ok(TensorArchive { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&super::read_file(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        super::write_file(path, &self.encode())
    }
}
