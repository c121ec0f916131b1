use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

pub const SCALES: usize = 3;

/// Network widths and structural constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Image channels of the blurred input and the restored output.
    pub in_channels: usize,
    /// Blur-frame encoder widths per scale.
    pub frame_channels: [usize; SCALES],
    /// Event encoder widths per scale.
    pub event_channels: [usize; SCALES],
    pub hidden_channels: usize,
    /// Voxel bins of the past-period grid.
    pub bins: usize,
    /// Temporal units of the current period; the event pyramid has `units + 1` slots.
    pub units: usize,
    /// Side of the per-pixel dynamic filters.
    pub dynamic_kernel: usize,
    /// Side of both convolutions in the filter-generation block.
    pub filter_conv_kernel: usize,
    pub gn_groups: usize,
    pub attention_reduction: usize,
    pub spatial_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 1,
            frame_channels: [16, 32, 64],
            event_channels: [8, 16, 32],
            hidden_channels: 16,
            bins: 16,
            units: 8,
            dynamic_kernel: 5,
            filter_conv_kernel: 3,
            gn_groups: 4,
            attention_reduction: 2,
            spatial_kernel: 7,
        }
    }
}

impl ModelConfig {
    /// Reduced widths and kernels for single-core toy training.
    pub fn small() -> Self {
        ModelConfig {
            frame_channels: [8, 16, 32],
            event_channels: [8, 8, 16],
            hidden_channels: 8,
            dynamic_kernel: 3,
            filter_conv_kernel: 1,
            ..Self::default()
        }
    }

    /// Temporal slots of the event pyramid (past period plus current units).
    pub fn slots(&self) -> usize {
        self.units + 1
    }

    /// Spatial sides must divide by this.
    pub fn size_multiple(&self) -> usize {
        1 << (SCALES - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.in_channels == 0 || self.hidden_channels == 0 || self.bins == 0 || self.units == 0 {
            return bad("channel, bin and unit counts must be positive".into());
        }
        if self.frame_channels.contains(&0) || self.event_channels.contains(&0) {
            return bad("per-scale widths must be positive".into());
        }
        if self.gn_groups == 0 || !self.event_channels[0].is_multiple_of(self.gn_groups) {
            return bad(format!(
                "template width {} is not divisible into {} groups",
                self.event_channels[0], self.gn_groups
            ));
        }
        for (name, k) in [
            ("dynamic_kernel", self.dynamic_kernel),
            ("filter_conv_kernel", self.filter_conv_kernel),
            ("spatial_kernel", self.spatial_kernel),
        ] {
            if k % 2 == 0 {
                return bad(format!("{name} must be odd, got {k}"));
            }
        }
        if self.attention_reduction == 0
            || self.frame_channels.iter().any(|c| c / self.attention_reduction == 0)
        {
            return bad("attention reduction leaves no hidden channels".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambdas: [f64; SCALES],
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambdas: [1.0, 0.1, 0.1],
            eps: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub crop: usize,
    pub lr: f64,
    /// Fractions of `steps` at which the learning rate is multiplied by `decay`.
    pub milestones: Vec<f64>,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch: 4,
            crop: 48,
            lr: 1e-4,
            milestones: vec![0.6, 0.8],
            decay: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Learning rate in effect at `step` (0-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        let passed = self
            .milestones
            .iter()
            .filter(|&&f| step as f64 >= f * self.steps as f64)
            .count();
        self.lr * self.decay.powi(passed as i32)
    }
}
