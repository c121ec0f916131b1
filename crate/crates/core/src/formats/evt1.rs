//! `EVT1` binary event files.
//!
//! Layout (little-endian): magic `EVT1\0\0\0\0`, `u32` width, `u32` height,
//! `f64` beta, `u64` count, then `count` 14-byte records
//! `(u64 t, u16 x, u16 y, i8 p, u8 pad)`.

use std::path::Path;

use super::Reader;
use crate::error::{CoreError, Result};
use crate::event::{Event, EventStream, Polarity};

pub const MAGIC: &[u8; 8] = b"EVT1\0\0\0\0";
pub const HEADER_LEN: usize = 32;
pub const RECORD_LEN: usize = 14;

pub fn encode(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(stream.width() as u32).to_le_bytes());
    out.extend_from_slice(&(stream.height() as u32).to_le_bytes());
    out.extend_from_slice(&stream.beta().to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in stream.events() {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.p.sign() as i8 as u8);
        out.push(0);
    }
    out
}

/// Decodes an `EVT1` buffer. The span of the result is `[first t, last t + 1)`,
/// or `[0, 0)` for an empty file, since the format does not store one.
pub fn decode(bytes: &[u8]) -> Result<EventStream> {
    let bad = |detail: String| CoreError::format("EVT1", detail);
    let mut r = Reader::new(bytes, "EVT1");
    if r.take(8, "magic")? != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let width = r.u32("width")? as usize;
    let height = r.u32("height")? as usize;
    let beta = r.f64("beta")?;
    let count = r.u64("count")?;
    if !(beta.is_finite() && beta > 0.0) {
        return Err(bad(format!("contrast threshold must be > 0, got {beta}")));
    }
    let needed = count
        .checked_mul(RECORD_LEN as u64)
        .filter(|&n| n <= r.remaining() as u64)
        .ok_or_else(|| {
            bad(format!(
                "header declares {count} records but only {} bytes follow",
                r.remaining()
            ))
        })?;
    if (r.remaining() as u64) != needed {
        return Err(bad(format!(
            "{} trailing bytes after {count} records",
            r.remaining() as u64 - needed
        )));
    }
    let mut events = Vec::with_capacity(count as usize);
    for i in 0..count {
        let t = r.u64("timestamp")?;
        let x = r.u16("x")?;
        let y = r.u16("y")?;
        let p = r.u8("polarity")? as i8;
        r.u8("padding")?;
        let p = Polarity::from_sign(i64::from(p)).map_err(|_| bad(format!("record {i}: polarity {p}")))?;
        if usize::from(x) >= width || usize::from(y) >= height {
            return Err(bad(format!(
                "record {i}: ({x}, {y}) outside {width}x{height} sensor"
            )));
        }
        events.push(Event::new(t, x, y, p));
    }
    events.sort_unstable();
    let span = match (events.first(), events.last()) {
        (Some(a), Some(b)) => (a.t, b.t.checked_add(1).ok_or_else(|| bad("timestamp overflow".into()))?),
        _ => (0, 0),
    };
    EventStream::new(width, height, beta, span, events)
}

pub fn read(path: &Path) -> Result<EventStream> {
    decode(&super::read_file(path)?)
}

pub fn write(path: &Path, stream: &EventStream) -> Result<()> {
    super::write_file(path, &encode(stream))
}
