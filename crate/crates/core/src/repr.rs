//! Fixed-size tensor embeddings of event streams.

use edeblur_tensor::Tensor;

use crate::error::{CoreError, Result};
use crate::event::{EventStream, Polarity};

pub const DEFAULT_BINS: usize = 16;
pub const DEFAULT_UNITS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolarityMode {
    /// One `[B, H, W]` grid; negative events subtract.
    Signed,
    /// `[2B, H, W]`: positive bins first, then negative bins, both non-negative.
    TwoChannel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub bins: Tensor,
    pub t_span: (u64, u64),
    pub mode: PolarityMode,
    /// Events outside `t_span` that were not embedded.
    pub skipped: usize,
}

fn check_span(t_span: (u64, u64)) -> Result<u64> {
    if t_span.1 <= t_span.0 {
        return Err(CoreError::Input(format!(
            "time span [{}, {}) is empty",
            t_span.0, t_span.1
        )));
    }
    Ok(t_span.1 - t_span.0)
}

/// Bilinear temporal embedding into `bins` bins with centres spread evenly over `t_span`.
pub fn to_voxel(
    stream: &EventStream,
    t_span: (u64, u64),
    bins: usize,
    mode: PolarityMode,
) -> Result<VoxelGrid> {
    if bins == 0 {
        return Err(CoreError::Config("voxel grid needs at least one bin".into()));
    }
    let duration = check_span(t_span)? as f64;
    let (w, h) = stream.sensor_size();
    let plane = w * h;
    let channels = match mode {
        PolarityMode::Signed => bins,
        PolarityMode::TwoChannel => 2 * bins,
    };
    let mut data = vec![0.0; channels * plane];
    let range = stream.range(t_span.0, t_span.1);
    let skipped = stream.len() - range.len();
    let scale = (bins - 1) as f64;
    for e in &stream.events()[range] {
        let b_star = (e.t - t_span.0) as f64 / duration * scale;
        let lower = b_star.floor() as usize;
        let frac = b_star - lower as f64;
        let (offset, weight) = match (mode, e.p) {
            (PolarityMode::Signed, p) => (0, f64::from(p.sign())),
            (PolarityMode::TwoChannel, Polarity::Positive) => (0, 1.0),
            (PolarityMode::TwoChannel, Polarity::Negative) => (bins, 1.0),
        };
        let pix = usize::from(e.y) * w + usize::from(e.x);
        data[(offset + lower) * plane + pix] += (1.0 - frac) * weight;
        if frac > 0.0 {
            data[(offset + lower + 1) * plane + pix] += frac * weight;
        }
    }
    Ok(VoxelGrid {
        bins: Tensor::new(vec![channels, h, w], data)?,
        t_span,
        mode,
        skipped,
    })
}

/// Per-polarity event counts over `N` equal sub-intervals of a span.
#[derive(Debug, Clone, PartialEq)]
pub struct EventUnits {
    /// `[N, 2, H, W]`; channel 0 counts positive events, channel 1 negative ones.
    pub units: Tensor,
    pub t_span: (u64, u64),
    /// Duration of one unit, `(t1 - t0) / N`.
    pub unit_span: f64,
    pub skipped: usize,
}

impl EventUnits {
    pub fn count(&self) -> usize {
        self.units.shape()[0]
    }

    /// `[2, H, W]` slice for unit `n`.
    pub fn unit(&self, n: usize) -> Result<Tensor> {
        let s = self.units.shape();
        let t = self.units.narrow0(n, 1)?;
        Ok(t.reshape(vec![s[1], s[2], s[3]])?)
    }

    /// Index of the unit containing `t`, if `t` lies inside the span.
    pub fn unit_of(&self, t: u64) -> Option<usize> {
        unit_index(t, self.t_span, self.count())
    }
}

fn unit_index(t: u64, t_span: (u64, u64), n: usize) -> Option<usize> {
    if t < t_span.0 || t >= t_span.1 {
        return None;
    }
    let d = u128::from(t_span.1 - t_span.0);
    Some((u128::from(t - t_span.0) * n as u128 / d) as usize)
}

/// Splits the events of `t_span` into `n` units; unit `k` covers
/// `[t0 + k*dt, t0 + (k+1)*dt)` with `dt = (t1 - t0) / n`.
pub fn split_units(stream: &EventStream, t_span: (u64, u64), n: usize) -> Result<EventUnits> {
    if n == 0 {
        return Err(CoreError::Config("number of temporal units must be >= 1".into()));
    }
    let duration = check_span(t_span)?;
    let (w, h) = stream.sensor_size();
    let plane = w * h;
    let mut counts = vec![0u32; n * 2 * plane];
    let range = stream.range(t_span.0, t_span.1);
    let skipped = stream.len() - range.len();
    for e in &stream.events()[range] {
        let u = unit_index(e.t, t_span, n).expect("event inside span");
        let c = match e.p {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
        };
        counts[(u * 2 + c) * plane + usize::from(e.y) * w + usize::from(e.x)] += 1;
    }
    Ok(EventUnits {
        units: Tensor::new(
            vec![n, 2, h, w],
            counts.into_iter().map(f64::from).collect(),
        )?,
        t_span,
        unit_span: duration as f64 / n as f64,
        skipped,
    })
}

/// Splits out the events of period `current` and of the period before it.
/// The past part is empty (with an empty span at the period start) for the first period.
pub fn partition_past_current(
    stream: &EventStream,
    periods: &[(u64, u64)],
    current: usize,
) -> Result<(EventStream, EventStream)> {
    let &(c0, c1) = periods.get(current).ok_or_else(|| {
        CoreError::Input(format!(
            "period {current} requested but only {} periods given",
            periods.len()
        ))
    })?;
    for (i, p) in periods.iter().enumerate() {
        if p.1 < p.0 {
            return Err(CoreError::Input(format!("period {i} ends before it starts")));
        }
        if i > 0 && periods[i - 1].1 != p.0 {
            return Err(CoreError::Input(format!(
                "periods {} and {i} are not contiguous",
                i - 1
            )));
        }
    }
    let current_part = stream.slice(c0, c1)?;
    let past = match current.checked_sub(1) {
        Some(prev) => stream.slice(periods[prev].0, periods[prev].1)?,
        None => stream.slice(c0, c0)?,
    };
    Ok((past, current_part))
}
