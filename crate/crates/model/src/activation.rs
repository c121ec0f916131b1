//! Per-slot summaries of the temporal activation map and their plots.

use edeblur_tensor::Tensor;

use crate::batch::SampleTensors;
use crate::error::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Past,
    Exposure,
    Readout,
    /// Straddles the exposure boundary.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotActivation {
    pub slot: usize,
    pub t_start: u64,
    pub t_end: u64,
    pub mean_z: f64,
    pub phase: Phase,
}

/// Time span of every event slot: the past period, then `units` equal slices of the current one.
pub fn slot_spans(sample: &SampleTensors, units: usize) -> Vec<(u64, u64)> {
    let (t0, t1) = sample.period;
    let past = sample.past_period.unwrap_or((t0.saturating_sub(t1 - t0), t0));
    let len = (t1 - t0) as f64;
    let edge = |n: usize| t0 + (len * n as f64 / units as f64).floor() as u64;
    std::iter::once(past)
        .chain((0..units).map(|n| (edge(n), if n + 1 == units { t1 } else { edge(n + 1) })))
        .collect()
}

fn phase_of(slot: usize, span: (u64, u64), exposure: (u64, u64)) -> Phase {
    if slot == 0 {
        Phase::Past
    } else if span.0 >= exposure.0 && span.1 <= exposure.1 {
        Phase::Exposure
    } else if span.0 >= exposure.1 {
        Phase::Readout
    } else {
        Phase::Mixed
    }
}

/// Channel-mean activation of each slot for batch element `b`.
/// `z0` is `[slots * batch, C, 1, 1]` in slot-major order.
pub fn slot_profile(z0: &Tensor, batch: usize, b: usize, sample: &SampleTensors) -> Result<Vec<SlotActivation>> {
    let [n, c, h, w] = z0.dims4()?;
    if batch == 0 || n % batch != 0 || b >= batch || h * w != 1 {
        return Err(ModelError::Input(format!(
            "activation map {:?} does not match batch {batch}",
            z0.shape()
        )));
    }
    let slots = n / batch;
    let spans = slot_spans(sample, slots - 1);
    Ok(spans
        .into_iter()
        .enumerate()
        .map(|(t, span)| {
            let row = &z0.data()[(t * batch + b) * c..(t * batch + b + 1) * c];
            SlotActivation {
                slot: t,
                t_start: span.0,
                t_end: span.1,
                mean_z: row.iter().sum::<f64>() / c as f64,
                phase: phase_of(t, span, sample.exposure),
            }
        })
        .collect())
}

/// Means over exposure-interior and readout-only slots, when both kinds exist.
pub fn phase_means(profile: &[SlotActivation]) -> Option<(f64, f64)> {
    let mean = |ph: Phase| {
        let v: Vec<f64> = profile.iter().filter(|s| s.phase == ph).map(|s| s.mean_z).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Some((mean(Phase::Exposure)?, mean(Phase::Readout)?))
}

/// Averages profiles slot by slot.
pub fn average_profiles(profiles: &[Vec<SlotActivation>]) -> Option<Vec<SlotActivation>> {
    let first = profiles.first()?;
    let mut out = first.clone();
    for (i, slot) in out.iter_mut().enumerate() {
        slot.mean_z = profiles.iter().map(|p| p[i].mean_z).sum::<f64>() / profiles.len() as f64;
    }
    Some(out)
}

pub fn to_csv(profile: &[SlotActivation]) -> String {
    let mut out = String::from("slot_index,slot_t_start,slot_t_end,mean_Z\n");
    for s in profile {
        out.push_str(&format!("{},{},{},{:.9}\n", s.slot, s.t_start, s.t_end, s.mean_z));
    }
    out
}

/// Bar chart of per-slot activation with the exposure start (yellow) and end (red) marked.
pub fn to_svg(profile: &[SlotActivation], exposure: (u64, u64)) -> String {
    const W: f64 = 640.0;
    const H: f64 = 320.0;
    const M: f64 = 40.0;
    let t_min = profile.iter().map(|s| s.t_start).min().unwrap_or(0) as f64;
    let t_max = profile.iter().map(|s| s.t_end).max().unwrap_or(1) as f64;
    let sx = |t: f64| M + (W - 2.0 * M) * (t - t_min) / (t_max - t_min).max(1.0);
    let sy = |z: f64| H - M - (H - 2.0 * M) * z.clamp(0.0, 1.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <line x1=\"{M}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{b}\" stroke=\"black\"/>\n",
        b = H - M,
        r = W - M
    );
    for s in profile {
        let (x0, x1) = (sx(s.t_start as f64), sx(s.t_end as f64));
        let y = sy(s.mean_z);
        let fill = if s.phase == Phase::Past { "#9e9e9e" } else { "#3f6fb5" };
        svg.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{fill}\">\
             <title>slot {} mean Z {:.4}</title></rect>\n",
            x0 + 1.0,
            (x1 - x0 - 2.0).max(0.5),
            H - M - y,
            s.slot,
            s.mean_z
        ));
    }
    for (t, color) in [(exposure.0, "#f2c200"), (exposure.1, "#d62728")] {
        let x = sx(t as f64);
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{M}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"{color}\" stroke-width=\"2\" stroke-dasharray=\"6 3\"/>\n",
            H - M
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.0}\" y=\"{:.0}\" font-size=\"12\" text-anchor=\"middle\">time</text>\n\
         <text x=\"12\" y=\"{M}\" font-size=\"12\">Z</text>\n</svg>\n",
        W / 2.0,
        H - 10.0
    ));
    svg
}
