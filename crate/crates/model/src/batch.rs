//! Converting blurred samples and their events into network inputs.

use edeblur_core::{split_units, to_voxel, BlurSample, PolarityMode};
use edeblur_tensor::Tensor;

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};

/// One sample in network layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTensors {
    /// `[C, H, W]`
    pub blur: Tensor,
    /// `[C, H, W]`
    pub sharp: Tensor,
    /// `[bins, H, W]` signed voxel grid of the previous shutter period.
    pub past: Tensor,
    /// `[N, 2, H, W]` per-polarity counts of the current period.
    pub units: Tensor,
    /// Current shutter period `[t0, t1)`.
    pub period: (u64, u64),
    /// Exposure phase `[t0, t1)`. Only used for evaluation, never by the loss.
    pub exposure: (u64, u64),
    pub past_period: Option<(u64, u64)>,
}

impl SampleTensors {
    pub fn from_sample(sample: &BlurSample, cfg: &ModelConfig) -> Result<Self> {
        let (blur, sharp) = match cfg.in_channels {
            1 => (sample.blur.luma(), sample.gt_sharp.luma()),
            3 if sample.blur.channels() == 3 => (sample.blur.clone(), sample.gt_sharp.clone()),
            c => {
                return Err(ModelError::Config(format!(
                    "model expects {c} channels, sample has {}",
                    sample.blur.channels()
                )))
            }
        };
        let (w, h) = (blur.width(), blur.height());
        let past = match sample.past_window {
            Some(span) if span.1 > span.0 => {
                to_voxel(&sample.past_events, span, cfg.bins, PolarityMode::Signed)?.bins
            }
            _ => Tensor::zeros(vec![cfg.bins, h, w]),
        };
        let units = split_units(&sample.current_events, sample.events_window, cfg.units)?.units;
        Ok(SampleTensors {
            blur: blur.to_tensor(),
            sharp: sharp.to_tensor(),
            past,
            units,
            period: sample.events_window,
            exposure: sample.exposure_span,
            past_period: sample.past_window,
        })
    }

    pub fn height(&self) -> usize {
        self.blur.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.blur.shape()[2]
    }

    /// `size x size` window with top-left corner `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, size: usize) -> Result<Self> {
        self.crop_rect(x, y, size, size)
    }

    /// `w x h` window with top-left corner `(x, y)`.
    pub fn crop_rect(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Self> {
        if x + w > self.width() || y + h > self.height() {
            return Err(ModelError::Input(format!(
                "crop {w}x{h} at ({x}, {y}) exceeds {}x{}",
                self.width(),
                self.height()
            )));
        }
        Ok(SampleTensors {
            blur: crop_planes(&self.blur, x, y, w, h),
            sharp: crop_planes(&self.sharp, x, y, w, h),
            past: crop_planes(&self.past, x, y, w, h),
            units: crop_planes(&self.units, x, y, w, h),
            ..self.clone()
        })
    }

    /// Top-left window whose sides are the largest multiples of `m` that fit.
    pub fn crop_to_multiple(&self, m: usize) -> Result<Self> {
        let (w, h) = (self.width() / m * m, self.height() / m * m);
        if w == 0 || h == 0 {
            return Err(ModelError::Input(format!(
                "{}x{} is smaller than the {m}px size multiple",
                self.width(),
                self.height()
            )));
        }
        self.crop_rect(0, 0, w, h)
    }
}

/// Crops the trailing two axes of any tensor.
fn crop_planes(t: &Tensor, x: usize, y: usize, cw: usize, ch: usize) -> Tensor {
    let s = t.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = t.numel() / (h * w);
    let mut data = Vec::with_capacity(planes * cw * ch);
    for p in 0..planes {
        for row in y..y + ch {
            let start = p * h * w + row * w + x;
            data.extend_from_slice(&t.data()[start..start + cw]);
        }
    }
    let mut shape = s.to_vec();
    let r = shape.len();
    shape[r - 2] = ch;
    shape[r - 1] = cw;
    Tensor::new(shape, data).expect("crop shape matches data")
}

/// A stacked minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[B, C, H, W]`
    pub blur: Tensor,
    /// `[B, C, H, W]`
    pub sharp: Tensor,
    /// `[B, bins, H, W]`
    pub past: Tensor,
    /// `[N * B, 2, H, W]`, unit-major.
    pub units: Tensor,
    pub size: usize,
}

impl Batch {
    pub fn stack(samples: &[SampleTensors]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| ModelError::Input("empty batch".into()))?;
        for s in samples {
            if s.blur.shape() != first.blur.shape() || s.units.shape() != first.units.shape() || s.past.shape() != first.past.shape() {
                return Err(ModelError::Input("batch samples differ in shape".into()));
            }
        }
        let b = samples.len();
        let lead = |t: &Tensor, n: usize| {
            let mut shape = vec![n];
            shape.extend_from_slice(t.shape());
            shape
        };
        let cat = |f: &dyn Fn(&SampleTensors) -> &Tensor| {
            let data: Vec<f64> = samples.iter().flat_map(|s| f(s).data().iter().copied()).collect();
            Tensor::new(lead(f(first), b), data)
        };
        let n = first.units.shape()[0];
        let unit = first.units.numel() / n;
        let mut units = Vec::with_capacity(first.units.numel() * b);
        for u in 0..n {
            for s in samples {
                units.extend_from_slice(&s.units.data()[u * unit..(u + 1) * unit]);
            }
        }
        let mut ushape = first.units.shape().to_vec();
        ushape[0] = n * b;
        Ok(Batch {
            blur: cat(&|s| &s.blur)?,
            sharp: cat(&|s| &s.sharp)?,
            past: cat(&|s| &s.past)?,
            units: Tensor::new(ushape, units)?,
            size: b,
        })
    }
}
