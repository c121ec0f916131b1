//! `TNSR` float arrays: magic `TNSR`, `u32` rank, `u32` dims, `f32` data, little-endian.

use std::path::Path;

use edeblur_tensor::Tensor;

use super::Reader;
use crate::error::{CoreError, Result};

pub const MAGIC: &[u8; 4] = b"TNSR";
pub const MAX_RANK: usize = 8;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 4 * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Number of bytes `encode` produces for `shape`.
pub fn encoded_len(shape: &[usize]) -> usize {
    8 + 4 * shape.len() + 4 * shape.iter().product::<usize>()
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let (t, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(CoreError::format(
            "TNSR",
            format!("{} trailing bytes", bytes.len() - used),
        ));
    }
    Ok(t)
}

/// Decodes one tensor from the front of `bytes`, returning it and the bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Tensor, usize)> {
    let bad = |detail: String| CoreError::format("TNSR", detail);
    let mut r = Reader::new(bytes, "TNSR");
    if r.take(4, "magic")? != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let rank = r.u32("rank")? as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(bad(format!("rank {rank} outside 1..={MAX_RANK}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32("dimension")? as usize);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()))
        .ok_or_else(|| bad(format!("shape {shape:?} exceeds the {} data bytes present", r.remaining())))?;
    let mut data = Vec::with_capacity(numel);
    for i in 0..numel {
        let v = r.f32("value")?;
        if !v.is_finite() {
            return Err(bad(format!("non-finite value at element {i}")));
        }
        data.push(f64::from(v));
    }
    Ok((Tensor::new(shape, data)?, r.position()))
}

pub fn read(path: &Path) -> Result<Tensor> {
    decode(&super::read_file(path)?)
}

pub fn write(path: &Path, t: &Tensor) -> Result<()> {
    super::write_file(path, &encode(t))
}
