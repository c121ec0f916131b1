//! Forward model linking latent frames, events and blur, plus the closed-form
//! blur/residual-sum deblurring oracle.

use crate::error::{CoreError, Result};
use crate::event::{Event, EventStream, Polarity};
use crate::image::Image;

pub const DEFAULT_BETA: f64 = 0.2;
pub const DEFAULT_LOG_FLOOR: f64 = 1.0 / 255.0;

/// Latent frames with strictly increasing timestamps (microseconds).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Image>,
    timestamps: Vec<u64>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Image>, timestamps: Vec<u64>) -> Result<Self> {
        if frames.len() != timestamps.len() {
            return Err(CoreError::Input(format!(
                "{} frames but {} timestamps",
                frames.len(),
                timestamps.len()
            )));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(CoreError::Input(format!(
                "timestamps must be strictly increasing: t[{}]={} then t[{}]={}",
                i,
                timestamps[i],
                i + 1,
                timestamps[i + 1]
            )));
        }
        if let Some(first) = frames.first() {
            for (i, f) in frames.iter().enumerate() {
                if !f.same_size(first) || f.channels() != first.channels() {
                    return Err(CoreError::Dimension(format!(
                        "frame {i} is {}x{}x{}, frame 0 is {}x{}x{}",
                        f.width(),
                        f.height(),
                        f.channels(),
                        first.width(),
                        first.height(),
                        first.channels()
                    )));
                }
                if !f.in_unit_range() {
                    return Err(CoreError::Input(format!(
                        "frame {i} has intensities outside [0, 1]"
                    )));
                }
            }
        }
        Ok(FrameSequence { frames, timestamps })
    }

    /// Frames spaced `dt` apart starting at `t0`.
    pub fn uniform(frames: Vec<Image>, t0: u64, dt: u64) -> Result<Self> {
        let timestamps = (0..frames.len() as u64).map(|k| t0 + k * dt).collect();
        Self::new(frames, timestamps)
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn timestamps(&self) -> &[u64] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Timestamp of frame `k`, extrapolated with the last spacing past the end.
    pub fn time_at(&self, k: usize) -> u64 {
        let n = self.timestamps.len();
        if k < n {
            return self.timestamps[k];
        }
        let step = if n >= 2 {
            self.timestamps[n - 1] - self.timestamps[n - 2]
        } else {
            1
        };
        self.timestamps[n - 1] + (k - n + 1) as u64 * step
    }

    /// `[t_0, t_last)`, the span covered by simulated events.
    pub fn t_span(&self) -> (u64, u64) {
        (
            self.timestamps.first().copied().unwrap_or(0),
            self.timestamps.last().copied().unwrap_or(0),
        )
    }
}

/// Per-pixel contrast-threshold event generator with residual carry.
#[derive(Debug, Clone)]
pub struct EventSimulator {
    width: usize,
    height: usize,
    beta: f64,
    log_floor: f64,
    reference: Vec<f64>,
    last: Vec<f64>,
}

impl EventSimulator {
    pub fn new(first: &Image, beta: f64, log_floor: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(CoreError::Input(format!("contrast threshold must be > 0, got {beta}")));
        }
        if !(log_floor.is_finite() && log_floor > 0.0) {
            return Err(CoreError::Input(format!("log floor must be > 0, got {log_floor}")));
        }
        let log = log_plane(first, log_floor);
        Ok(EventSimulator {
            width: first.width(),
            height: first.height(),
            beta,
            log_floor,
            reference: log.clone(),
            last: log,
        })
    }

    /// Per-pixel reference log-intensity (the level of the last emitted event).
    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    /// Emits events for the transition to `next`, which is observed at `t1`; the
    /// previous frame was observed at `t0`. Event times fall in `[t0, t1)`.
    pub fn step(&mut self, next: &Image, t0: u64, t1: u64, out: &mut Vec<Event>) -> Result<()> {
        if next.width() != self.width || next.height() != self.height {
            return Err(CoreError::Dimension(format!(
                "frame is {}x{}, simulator is {}x{}",
                next.width(),
                next.height(),
                self.width,
                self.height
            )));
        }
        if t1 <= t0 {
            return Err(CoreError::Input(format!(
                "timestamps must be strictly increasing: {t0} then {t1}"
            )));
        }
        let dt = t1 - t0;
        let cur = log_plane(next, self.log_floor);
        for (i, &c) in cur.iter().enumerate() {
            let delta = c - self.reference[i];
            let count = (delta.abs() / self.beta).floor() as u64;
            if count > 0 {
                let sign = delta.signum();
                let p = if sign > 0.0 {
                    Polarity::Positive
                } else {
                    Polarity::Negative
                };
                let (x, y) = ((i % self.width) as u16, (i / self.width) as u16);
                let prev = self.last[i];
                for j in 1..=count {
                    let level = self.reference[i] + sign * j as f64 * self.beta;
                    let frac = ((level - prev) / (c - prev)).clamp(0.0, 1.0);
                    let offset = ((frac * dt as f64).floor() as u64).min(dt - 1);
                    out.push(Event::new(t0 + offset, x, y, p));
                }
                self.reference[i] += sign * count as f64 * self.beta;
            }
            self.last[i] = c;
        }
        Ok(())
    }
}

fn log_plane(image: &Image, log_floor: f64) -> Vec<f64> {
    image
        .luma()
        .data()
        .iter()
        .map(|&v| v.max(log_floor).ln())
        .collect()
}

/// Simulates the event stream of `seq` over `[t_0, t_last)`, computed on the luma plane.
pub fn simulate_events(seq: &FrameSequence, beta: f64, log_floor: f64) -> Result<EventStream> {
    if seq.len() < 2 {
        return Err(CoreError::Input(format!(
            "event simulation needs at least 2 frames, got {}",
            seq.len()
        )));
    }
    let frames = seq.frames();
    let ts = seq.timestamps();
    let mut sim = EventSimulator::new(&frames[0], beta, log_floor)?;
    let mut events = Vec::new();
    for k in 1..frames.len() {
        sim.step(&frames[k], ts[k - 1], ts[k], &mut events)?;
    }
    EventStream::from_unsorted(
        frames[0].width(),
        frames[0].height(),
        beta,
        seq.t_span(),
        events,
    )
}

/// Applies the events in `[t1, t2)` to `i1` as a per-pixel exponential gain.
pub fn integrate_events(i1: &Image, stream: &EventStream, t1: u64, t2: u64) -> Result<Image> {
    if t1 > t2 {
        return Err(CoreError::Input(format!("integration start {t1} after end {t2}")));
    }
    check_sensor(i1, stream)?;
    let counts = stream.signed_counts(t1, t2);
    let gains: Vec<f64> = counts
        .iter()
        .map(|&c| (stream.beta() * c as f64).exp())
        .collect();
    let mut out = i1.clone();
    let n = i1.pixels();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = (*v * gains[i % n]).clamp(0.0, 1.0);
    }
    Ok(out)
}

fn check_sensor(image: &Image, stream: &EventStream) -> Result<()> {
    if (image.width(), image.height()) != stream.sensor_size() {
        return Err(CoreError::Dimension(format!(
            "image is {}x{}, event sensor is {}x{}",
            image.width(),
            image.height(),
            stream.width(),
            stream.height()
        )));
    }
    Ok(())
}

/// Per-pixel arithmetic mean of `latents`.
pub fn synthesize_blur(latents: &[Image]) -> Result<Image> {
    let first = latents
        .first()
        .ok_or_else(|| CoreError::Input("cannot average an empty frame list".into()))?;
    let mut sum = vec![0.0; first.data().len()];
    for (k, f) in latents.iter().enumerate() {
        f.check_same_shape(first, &format!("blur frame {k}"))?;
        for (s, v) in sum.iter_mut().zip(f.data()) {
            *s += v;
        }
    }
    let n = latents.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Image::new(first.width(), first.height(), first.channels(), sum)
}

/// Strictly positive per-pixel plane `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSum {
    plane: Image,
}

impl ResidualSum {
    pub fn new(plane: Image) -> Result<Self> {
        if plane.channels() != 1 {
            return Err(CoreError::Dimension(format!(
                "residual sum is a single plane, got {} channels",
                plane.channels()
            )));
        }
        if let Some(i) = plane.data().iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(CoreError::Invariant(format!(
                "residual sum must be positive, pixel {i} is {}",
                plane.data()[i]
            )));
        }
        Ok(ResidualSum { plane })
    }

    pub fn plane(&self) -> &Image {
        &self.plane
    }
}

/// Mean over `sample_times` of `exp(beta * signed count)` between `anchor` and each time.
/// For a sample before the anchor the count over `[tau, anchor)` enters negated.
pub fn residual_sum(stream: &EventStream, anchor: u64, sample_times: &[u64]) -> Result<ResidualSum> {
    if sample_times.is_empty() {
        return Err(CoreError::Input("residual sum needs at least one sample time".into()));
    }
    let (s0, s1) = stream.t_span();
    for &t in sample_times.iter().chain(std::iter::once(&anchor)) {
        if t < s0 || t > s1 {
            return Err(CoreError::Input(format!(
                "time {t} outside event span [{s0}, {s1}]"
            )));
        }
    }
    let beta = stream.beta();
    let mut acc = vec![0.0; stream.width() * stream.height()];
    for &tau in sample_times {
        let counts = if tau >= anchor {
            stream.signed_counts(anchor, tau)
        } else {
            let mut c = stream.signed_counts(tau, anchor);
            c.iter_mut().for_each(|v| *v = -*v);
            c
        };
        for (a, c) in acc.iter_mut().zip(&counts) {
            *a += (beta * *c as f64).exp();
        }
    }
    let n = sample_times.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    ResidualSum::new(Image::gray(stream.width(), stream.height(), acc)?)
}

/// Latent estimate `blur / S`, clamped to `[0, 1]`. Every colour channel shares the gain `1 / S`.
pub fn edi_deblur(blur: &Image, s: &ResidualSum) -> Result<Image> {
    let plane = s.plane();
    if !blur.same_size(plane) {
        return Err(CoreError::Dimension(format!(
            "blur is {}x{}, residual sum is {}x{}",
            blur.width(),
            blur.height(),
            plane.width(),
            plane.height()
        )));
    }
    let n = blur.pixels();
    let mut out = blur.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = (*v / plane.data()[i % n]).clamp(0.0, 1.0);
    }
    Ok(out)
}
