use std::cmp::Ordering;

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn from_sign(p: i64) -> Result<Self> {
        match p {
            1 => Ok(Polarity::Positive),
            -1 => Ok(Polarity::Negative),
            other => Err(CoreError::Input(format!("polarity must be +1 or -1, got {other}"))),
        }
    }

    pub fn sign(self) -> i32 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

/// A single brightness-change event; `t` is in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: Polarity) -> Self {
        Event { t, x, y, p }
    }

    fn sort_key(&self) -> (u64, u16, u16, i32) {
        (self.t, self.y, self.x, self.p.sign())
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Time-ordered events from a `width x height` sensor, all inside the half-open span `[t_start, t_end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    width: usize,
    height: usize,
    beta: f64,
    t_span: (u64, u64),
}

impl EventStream {
    /// Validates sensor bounds, ordering and span membership.
    pub fn new(
        width: usize,
        height: usize,
        beta: f64,
        t_span: (u64, u64),
        events: Vec<Event>,
    ) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(CoreError::Input(format!("contrast threshold must be > 0, got {beta}")));
        }
        if t_span.0 > t_span.1 {
            return Err(CoreError::Input(format!(
                "time span start {} is after its end {}",
                t_span.0, t_span.1
            )));
        }
        for (i, e) in events.iter().enumerate() {
            if usize::from(e.x) >= width || usize::from(e.y) >= height {
                return Err(CoreError::Input(format!(
                    "event {i} at ({}, {}) outside {width}x{height} sensor",
                    e.x, e.y
                )));
            }
            if e.t < t_span.0 || e.t >= t_span.1 {
                return Err(CoreError::Input(format!(
                    "event {i} at t={} outside span [{}, {})",
                    e.t, t_span.0, t_span.1
                )));
            }
            if i > 0 && events[i - 1] > *e {
                return Err(CoreError::Input(format!("events not sorted at index {i}")));
            }
        }
        Ok(EventStream {
            events,
            width,
            height,
            beta,
            t_span,
        })
    }

    /// Sorts `events` first, then validates.
    pub fn from_unsorted(
        width: usize,
        height: usize,
        beta: f64,
        t_span: (u64, u64),
        mut events: Vec<Event>,
    ) -> Result<Self> {
        events.sort_unstable();
        Self::new(width, height, beta, t_span, events)
    }

    pub fn empty(width: usize, height: usize, beta: f64, t_span: (u64, u64)) -> Result<Self> {
        Self::new(width, height, beta, t_span, Vec::new())
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn sensor_size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn t_span(&self) -> (u64, u64) {
        self.t_span
    }

    /// Index range of events with `t0 <= t < t1`.
    pub fn range(&self, t0: u64, t1: u64) -> std::ops::Range<usize> {
        let lo = self.events.partition_point(|e| e.t < t0);
        let hi = self.events.partition_point(|e| e.t < t1).max(lo);
        lo..hi
    }

    /// Events in `[t0, t1)` as a new stream whose span is exactly `[t0, t1)`.
    pub fn slice(&self, t0: u64, t1: u64) -> Result<EventStream> {
        if t0 > t1 {
            return Err(CoreError::Input(format!("slice start {t0} after end {t1}")));
        }
        let events = self.events[self.range(t0, t1)].to_vec();
        Ok(EventStream {
            events,
            width: self.width,
            height: self.height,
            beta: self.beta,
            t_span: (t0, t1),
        })
    }

    /// Per-pixel signed polarity sum over `[t0, t1)`.
    pub fn signed_counts(&self, t0: u64, t1: u64) -> Vec<i64> {
        let mut counts = vec![0i64; self.width * self.height];
        for e in &self.events[self.range(t0, t1)] {
            counts[usize::from(e.y) * self.width + usize::from(e.x)] += i64::from(e.p.sign());
        }
        counts
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }
}
