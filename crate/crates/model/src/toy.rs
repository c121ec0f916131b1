//! Seeded synthetic training data: a textured scene under a random-walk motion,
//! captured by a two-phase shutter with a varying exposure length.

use edeblur_core::physics::DEFAULT_LOG_FLOOR;
use edeblur_core::synthetic::Texture;
use edeblur_core::{
    make_blur_sample, simulate_events, split_shutter, BlurSample, FrameSequence, ShutterConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub size: usize,
    /// Frames per shutter period.
    pub period: usize,
    /// Exposure frame counts drawn uniformly for training samples.
    pub train_exposures: Vec<usize>,
    pub val_exposure: usize,
    /// Jitter the training exposure lengths with shutter noise.
    pub noise: bool,
    pub beta: f64,
    /// Time units per frame.
    pub dt: u64,
    /// Initial speed bound and per-frame velocity jitter, in pixels per frame.
    pub speed: f64,
    pub jitter: f64,
    /// Texture wave periods in pixels.
    pub texture_periods: (f64, f64),
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            size: 48,
            period: 16,
            train_exposures: vec![9, 11, 13, 15],
            val_exposure: 11,
            noise: true,
            beta: 0.2,
            dt: 1000,
            speed: 0.5,
            jitter: 0.25,
            texture_periods: (8.0, 20.0),
        }
    }
}

const VAL_SEED_OFFSET: u64 = 1 << 40;

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = self.train_exposures.is_empty()
            || self
                .train_exposures
                .iter()
                .chain([&self.val_exposure])
                .any(|&m| m == 0 || m > self.period);
        if bad || self.size == 0 || self.dt == 0 {
            return Err(ModelError::Config(format!(
                "toy exposures must lie in 1..={} and sizes be positive",
                self.period
            )));
        }
        Ok(())
    }

    /// Two shutter periods plus one closing frame of a random-walk scene.
    pub fn sequence(&self, seed: u64) -> Result<FrameSequence> {
        let texture = Texture::random(seed, 6, self.texture_periods.0, self.texture_periods.1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f70a7);
        let (mut px, mut py) = (0.0, 0.0);
        let mut v: (f64, f64) = (
            rng.gen_range(-self.speed..=self.speed),
            rng.gen_range(-self.speed..=self.speed),
        );
        let limit = 2.0 * self.speed + self.jitter;
        let frames = (0..2 * self.period + 1)
            .map(|_| {
                let img = texture.render(self.size, self.size, px, py);
                v.0 = (v.0 + rng.gen_range(-self.jitter..=self.jitter)).clamp(-limit, limit);
                v.1 = (v.1 + rng.gen_range(-self.jitter..=self.jitter)).clamp(-limit, limit);
                px += v.0;
                py += v.1;
                img
            })
            .collect();
        Ok(FrameSequence::uniform(frames, 0, self.dt)?)
    }

    /// The second shutter period of the scene `seed`, exposed for `m` frames.
    pub fn sample(&self, seed: u64, m: usize, noise: bool) -> Result<BlurSample> {
        let seq = self.sequence(seed)?;
        let events = simulate_events(&seq, self.beta, DEFAULT_LOG_FLOOR)?;
        let mut shutter = ShutterConfig::new(m, self.period - m)?.with_seed(seed);
        if noise {
            shutter = shutter.with_noise(seed);
        }
        let windows = split_shutter(seq.len(), &shutter)?;
        Ok(make_blur_sample(&seq, &windows[1], &events, &shutter.tag())?)
    }

    /// Training sample `index` of the stream seeded by `seed`.
    pub fn train_sample(&self, seed: u64, index: u64) -> Result<BlurSample> {
        let scene = seed.wrapping_mul(0x9e37_79b9).wrapping_add(index);
        let mut rng = ChaCha8Rng::seed_from_u64(scene);
        let m = self.train_exposures[rng.gen_range(0..self.train_exposures.len())];
        self.sample(scene, m, self.noise)
    }

    /// Held-out sample `index`, always at the validation exposure and noise-free.
    pub fn val_sample(&self, seed: u64, index: u64) -> Result<BlurSample> {
        let scene = seed.wrapping_mul(0x9e37_79b9).wrapping_add(VAL_SEED_OFFSET + index);
        self.sample(scene, self.val_exposure, false)
    }
}
