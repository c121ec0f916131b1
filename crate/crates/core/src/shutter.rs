//! Exposure/readout shutter simulation and blurred-dataset synthesis.

use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::event::EventStream;
use crate::formats::{self, evt1, tnsr};
use crate::image::Image;
use crate::physics::{synthesize_blur, FrameSequence};

/// Readout noise is drawn from `U[-NOISE_RATIO * n, NOISE_RATIO * n]` frames.
pub const NOISE_RATIO: f64 = 0.6;
pub const MANIFEST_NAME: &str = "manifest.jsonl";
pub const EVENTS_NAME: &str = "events.evt1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShutterConfig {
    /// Exposure frames per period.
    pub m: usize,
    /// Readout frames per period.
    pub n: usize,
    pub noise: bool,
    pub seed: u64,
}

impl ShutterConfig {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        if m == 0 {
            return Err(CoreError::Config("exposure frame count m must be >= 1".into()));
        }
        Ok(ShutterConfig {
            m,
            n,
            noise: false,
            seed: 0,
        })
    }

    pub fn with_noise(mut self, seed: u64) -> Self {
        self.noise = true;
        self.seed = seed;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn period(&self) -> usize {
        self.m + self.n
    }

    pub fn noise_half_width(&self) -> f64 {
        NOISE_RATIO * self.n as f64
    }

    pub fn tag(&self) -> String {
        format!("dataset-{}-{}", self.m, self.n)
    }

    /// Noise draw for window `index`; zero when noise is off. Each window owns
    /// a ChaCha stream, so draws do not depend on generation order.
    pub fn noise_draw(&self, index: usize) -> f64 {
        if !self.noise || self.n == 0 {
            return 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let hw = self.noise_half_width();
        rng.gen_range(-hw..=hw)
    }

    /// Effective exposure length `clamp(round(m + eps), 1, m + n)`.
    pub fn effective_exposure(&self, index: usize) -> usize {
        let raw = (self.m as f64 + self.noise_draw(index)).round();
        (raw.max(1.0) as usize).min(self.period())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShutterWindow {
    pub index: usize,
    /// Exposure frames, always at the start of the period.
    pub exposure: Range<usize>,
    pub readout: Range<usize>,
}

impl ShutterWindow {
    pub fn start(&self) -> usize {
        self.exposure.start
    }

    pub fn end(&self) -> usize {
        self.readout.end
    }

    pub fn period(&self) -> usize {
        self.end() - self.start()
    }
}

/// Cuts `total_frames` into consecutive periods of `m + n` frames; leftover frames are dropped.
pub fn split_shutter(total_frames: usize, config: &ShutterConfig) -> Result<Vec<ShutterWindow>> {
    let period = config.period();
    if config.m == 0 {
        return Err(CoreError::Config("exposure frame count m must be >= 1".into()));
    }
    if total_frames < period {
        return Err(CoreError::Input(format!(
            "{total_frames} frames cannot hold one {period}-frame shutter period"
        )));
    }
    Ok((0..total_frames / period)
        .map(|index| {
            let start = index * period;
            let m_eff = config.effective_exposure(index);
            ShutterWindow {
                index,
                exposure: start..start + m_eff,
                readout: start + m_eff..start + period,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlurSample {
    pub blur: Image,
    pub gt_sharp: Image,
    /// Inclusive source-frame range averaged into `blur`.
    pub exposure_window: (usize, usize),
    pub gt_index: usize,
    /// Inclusive readout range, absent when the exposure fills the period.
    pub readout_window: Option<(usize, usize)>,
    /// `[t_start, t_end)` of the whole shutter period.
    pub events_window: (u64, u64),
    /// `[t_start, t_end)` of the exposure phase.
    pub exposure_span: (u64, u64),
    /// Previous shutter period, absent for the first one.
    pub past_window: Option<(u64, u64)>,
    pub current_events: EventStream,
    pub past_events: EventStream,
    pub config_tag: String,
    /// Indices of every frame that entered the blur average.
    pub sources: Vec<usize>,
}

impl BlurSample {
    /// Frame timestamps inside the exposure phase, used as latent sample times.
    pub fn exposure_times(&self, seq: &FrameSequence) -> Vec<u64> {
        (self.exposure_window.0..=self.exposure_window.1)
            .map(|k| seq.time_at(k))
            .collect()
    }
}

pub fn make_blur_sample(
    seq: &FrameSequence,
    window: &ShutterWindow,
    events: &EventStream,
    config_tag: &str,
) -> Result<BlurSample> {
    if window.exposure.is_empty() {
        return Err(CoreError::Invariant(format!(
            "shutter window {} has no exposure frames",
            window.index
        )));
    }
    if window.exposure.end > seq.len() {
        return Err(CoreError::Input(format!(
            "exposure frames {:?} beyond the {}-frame sequence",
            window.exposure,
            seq.len()
        )));
    }
    let frames = seq.frames();
    let first = &frames[0];
    if (first.width(), first.height()) != events.sensor_size() {
        return Err(CoreError::Dimension(format!(
            "frames are {}x{}, event sensor is {}x{}",
            first.width(),
            first.height(),
            events.width(),
            events.height()
        )));
    }
    let sources: Vec<usize> = window.exposure.clone().collect();
    let blur = synthesize_blur(&frames[window.exposure.clone()])?;
    let gt_index = window.exposure.start + (window.exposure.len() - 1) / 2;
    let events_window = (seq.time_at(window.start()), seq.time_at(window.end()));
    let exposure_span = (seq.time_at(window.exposure.start), seq.time_at(window.exposure.end));
    let past_window = window
        .start()
        .checked_sub(window.period())
        .map(|s| (seq.time_at(s), events_window.0));
    let current_events = events.slice(events_window.0, events_window.1)?;
    let past_events = match past_window {
        Some((a, b)) => events.slice(a, b)?,
        None => events.slice(events_window.0, events_window.0)?,
    };
    Ok(BlurSample {
        blur,
        gt_sharp: frames[gt_index].clone(),
        exposure_window: (window.exposure.start, window.exposure.end - 1),
        gt_index,
        readout_window: (!window.readout.is_empty())
            .then(|| (window.readout.start, window.readout.end - 1)),
        events_window,
        exposure_span,
        past_window,
        current_events,
        past_events,
        config_tag: config_tag.to_string(),
        sources,
    })
}

/// One manifest line. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub index: usize,
    pub config_tag: String,
    pub m: usize,
    pub n: usize,
    pub noise: bool,
    pub seed: u64,
    pub window_index: usize,
    pub noise_draw: f64,
    pub exposure_frames: usize,
    pub exposure_window: (usize, usize),
    pub readout_window: Option<(usize, usize)>,
    pub gt_index: usize,
    pub events_window: (u64, u64),
    pub exposure_span: (u64, u64),
    pub past_window: Option<(u64, u64)>,
    pub blur: String,
    pub sharp: String,
    pub events: String,
}

pub fn encode_manifest(records: &[ManifestRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

pub fn decode_manifest(text: &str) -> Result<Vec<ManifestRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CoreError::format("manifest", format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// Writes every window of every config under `out_dir` along with `manifest.jsonl`.
pub fn build_dataset(
    seq: &FrameSequence,
    events: &EventStream,
    configs: &[ShutterConfig],
    out_dir: &Path,
) -> Result<Vec<ManifestRecord>> {
    if configs.is_empty() {
        return Err(CoreError::Config("at least one shutter config is required".into()));
    }
    evt1::write(&out_dir.join(EVENTS_NAME), events)?;
    let mut records = Vec::new();
    for config in configs {
        let tag = config.tag();
        for window in split_shutter(seq.len(), config)? {
            let sample = make_blur_sample(seq, &window, events, &tag)?;
            let stem = format!("samples/{tag}_{:04}", window.index);
            let blur = format!("{stem}_blur.tnsr");
            let sharp = format!("{stem}_sharp.tnsr");
            tnsr::write(&out_dir.join(&blur), &sample.blur.to_tensor())?;
            tnsr::write(&out_dir.join(&sharp), &sample.gt_sharp.to_tensor())?;
            records.push(ManifestRecord {
                index: records.len(),
                config_tag: tag.clone(),
                m: config.m,
                n: config.n,
                noise: config.noise,
                seed: config.seed,
                window_index: window.index,
                noise_draw: config.noise_draw(window.index),
                exposure_frames: window.exposure.len(),
                exposure_window: sample.exposure_window,
                readout_window: sample.readout_window,
                gt_index: sample.gt_index,
                events_window: sample.events_window,
                exposure_span: sample.exposure_span,
                past_window: sample.past_window,
                blur,
                sharp,
                events: EVENTS_NAME.into(),
            });
        }
    }
    formats::write_file(
        &out_dir.join(MANIFEST_NAME),
        encode_manifest(&records).as_bytes(),
    )?;
    Ok(records)
}

/// A manifest on disk with its event files loaded lazily.
#[derive(Debug)]
pub struct Dataset {
    root: PathBuf,
    records: Vec<ManifestRecord>,
    events: Vec<(String, EventStream)>,
}

impl Dataset {
    pub fn open(manifest: &Path) -> Result<Self> {
        let text = String::from_utf8(formats::read_file(manifest)?)
            .map_err(|_| CoreError::format("manifest", "not valid UTF-8"))?;
        let records = decode_manifest(&text)?;
        Ok(Dataset {
            root: manifest.parent().unwrap_or(Path::new(".")).to_path_buf(),
            records,
            events: Vec::new(),
        })
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn events_for(&mut self, name: &str) -> Result<&EventStream> {
        if let Some(i) = self.events.iter().position(|(n, _)| n == name) {
            return Ok(&self.events[i].1);
        }
        let stream = evt1::read(&self.root.join(name))?;
        self.events.push((name.to_string(), stream));
        Ok(&self.events.last().expect("just pushed").1)
    }

    /// Reloads sample `i`. Blur and sharp frames come back at `f32` precision.
    pub fn sample(&mut self, i: usize) -> Result<BlurSample> {
        let r = self
            .records
            .get(i)
            .cloned()
            .ok_or_else(|| CoreError::Input(format!("sample {i} not in a {}-record manifest", self.records.len())))?;
        let blur = Image::from_tensor(&tnsr::read(&self.root.join(&r.blur))?)?;
        let gt_sharp = Image::from_tensor(&tnsr::read(&self.root.join(&r.sharp))?)?;
        let events = self.events_for(&r.events)?;
        if (blur.width(), blur.height()) != events.sensor_size() {
            return Err(CoreError::Dimension(format!(
                "sample {i} is {}x{} but its events are {}x{}",
                blur.width(),
                blur.height(),
                events.width(),
                events.height()
            )));
        }
        let current_events = events.slice(r.events_window.0, r.events_window.1)?;
        let past_events = match r.past_window {
            Some((a, b)) => events.slice(a, b)?,
            None => events.slice(r.events_window.0, r.events_window.0)?,
        };
        Ok(BlurSample {
            blur,
            gt_sharp,
            exposure_window: r.exposure_window,
            gt_index: r.gt_index,
            readout_window: r.readout_window,
            events_window: r.events_window,
            exposure_span: r.exposure_span,
            past_window: r.past_window,
            current_events,
            past_events,
            config_tag: r.config_tag.clone(),
            sources: (r.exposure_window.0..=r.exposure_window.1).collect(),
        })
    }
}
