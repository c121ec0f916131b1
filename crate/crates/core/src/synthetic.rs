//! Procedural test scenes: smooth random textures under known motion.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::image::Image;
use crate::physics::FrameSequence;

/// Sum of plane waves mapped into `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    waves: Vec<Wave>,
    lo: f64,
    hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: f64,
}

impl Texture {
    /// `waves` random plane waves with periods between `min_period` and `max_period` pixels.
    pub fn random(seed: u64, waves: usize, min_period: f64, max_period: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ws: Vec<Wave> = (0..waves.max(1))
            .map(|_| {
                let period = rng.gen_range(min_period..=max_period);
                let angle = rng.gen_range(0.0..TAU);
                Wave {
                    fx: angle.cos() / period,
                    fy: angle.sin() / period,
                    phase: rng.gen_range(0.0..TAU),
                    amp: rng.gen_range(0.5..1.0),
                }
            })
            .collect();
        let total: f64 = ws.iter().map(|w| w.amp).sum();
        ws.iter_mut().for_each(|w| w.amp /= total);
        Texture {
            waves: ws,
            lo: 0.1,
            hi: 0.9,
        }
    }

    pub fn with_range(mut self, lo: f64, hi: f64) -> Self {
        self.lo = lo;
        self.hi = hi;
        self
    }

    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let s: f64 = self
            .waves
            .iter()
            .map(|w| w.amp * (TAU * (w.fx * x + w.fy * y) + w.phase).sin())
            .sum();
        self.lo + (self.hi - self.lo) * 0.5 * (s + 1.0)
    }

    /// The texture shifted by `(dx, dy)` pixels.
    pub fn render(&self, width: usize, height: usize, dx: f64, dy: f64) -> Image {
        Image::from_fn(width, height, |x, y| self.sample(x as f64 - dx, y as f64 - dy))
    }
}

/// A bright vertical bar on a dark background moving right by `speed` pixels per frame.
pub fn translating_bar(
    width: usize,
    height: usize,
    frames: usize,
    bar_width: f64,
    speed: f64,
    dt: u64,
) -> Result<FrameSequence> {
    let images = (0..frames)
        .map(|k| {
            let left = 2.0 + speed * k as f64;
            Image::from_fn(width, height, |x, _| {
                // Box-filtered coverage of the pixel by the bar gives anti-aliased edges.
                let (a, b) = (x as f64, x as f64 + 1.0);
                let cover = (b.min(left + bar_width) - a.max(left)).clamp(0.0, 1.0);
                0.15 + 0.7 * cover
            })
        })
        .collect();
    FrameSequence::uniform(images, 0, dt)
}

/// Texture translating at a constant velocity (pixels per frame).
pub fn translating_pattern(
    texture: &Texture,
    width: usize,
    height: usize,
    frames: usize,
    velocity: (f64, f64),
    dt: u64,
) -> Result<FrameSequence> {
    let images = (0..frames)
        .map(|k| texture.render(width, height, velocity.0 * k as f64, velocity.1 * k as f64))
        .collect();
    FrameSequence::uniform(images, 0, dt)
}

/// Texture following a seeded random walk in velocity.
pub fn random_motion(seed: u64, width: usize, height: usize, frames: usize, dt: u64) -> Result<FrameSequence> {
    let texture = Texture::random(seed, 6, 6.0, 24.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let (mut px, mut py) = (0.0, 0.0);
    let (mut vx, mut vy): (f64, f64) = (rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
    let mut images = Vec::with_capacity(frames);
    for _ in 0..frames {
        images.push(texture.render(width, height, px, py));
        vx = (vx + rng.gen_range(-0.5..0.5)).clamp(-2.5, 2.5);
        vy = (vy + rng.gen_range(-0.5..0.5)).clamp(-2.5, 2.5);
        px += vx;
        py += vy;
    }
    FrameSequence::uniform(images, 0, dt)
}
