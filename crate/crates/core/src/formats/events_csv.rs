//! Plain-text events: header `t,x,y,p`, one event per line.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::event::{Event, EventStream, Polarity};

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    t: u64,
    x: u16,
    y: u16,
    p: i64,
}

pub fn encode(stream: &EventStream) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in stream.events() {
        w.serialize(Row {
            t: e.t,
            x: e.x,
            y: e.y,
            p: i64::from(e.p.sign()),
        })
        .expect("writing to memory cannot fail");
    }
    if stream.is_empty() {
        w.write_record(["t", "x", "y", "p"]).expect("writing to memory cannot fail");
    }
    w.into_inner().expect("writing to memory cannot fail")
}

/// The CSV form carries no sensor metadata, so size and threshold come from the caller.
pub fn decode(bytes: &[u8], width: usize, height: usize, beta: f64) -> Result<EventStream> {
    let bad = |detail: String| CoreError::format("events CSV", detail);
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let headers = r.headers().map_err(|e| bad(e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["t", "x", "y", "p"] {
        return Err(bad(format!("expected header t,x,y,p, got {:?}", headers.iter().collect::<Vec<_>>())));
    }
    let mut events = Vec::new();
    for (i, row) in r.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| bad(format!("line {}: {e}", i + 2)))?;
        let p = Polarity::from_sign(row.p).map_err(|_| bad(format!("line {}: polarity {}", i + 2, row.p)))?;
        if usize::from(row.x) >= width || usize::from(row.y) >= height {
            return Err(bad(format!(
                "line {}: ({}, {}) outside {width}x{height} sensor",
                i + 2,
                row.x,
                row.y
            )));
        }
        events.push(Event::new(row.t, row.x, row.y, p));
    }
    events.sort_unstable();
    let span = match (events.first(), events.last()) {
        (Some(a), Some(b)) => (a.t, b.t.checked_add(1).ok_or_else(|| bad("timestamp overflow".into()))?),
        _ => (0, 0),
    };
    EventStream::new(width, height, beta, span, events)
}
