use std::path::Path;

use edeblur_core::formats::archive::TensorArchive;
use edeblur_tensor::{Graph, Tensor, Var};

use crate::batch::Batch;
use crate::config::{LossConfig, ModelConfig};
use crate::encoders::{assemble_event_pyramid, encode_current, encode_frame, encode_past};
use crate::error::{ModelError, Result};
use crate::etes::{self, Selection};
use crate::fusion::{charbonnier_loss, decode, fuse_all, gt_pyramid};
use crate::params::{Bound, Params, SpecList};

pub const PARAM_PREFIX: &str = "param/";
pub const CONFIG_TENSOR: &str = "meta/config";

/// Graph handles for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub blur: Var,
    pub past: Var,
    pub units: Var,
    pub frame: [Var; 3],
    pub events: [Var; 3],
    pub selection: Selection,
    pub fused: [Var; 3],
    pub outputs: [Var; 3],
}

/// Concrete results of inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Restored frames at full, half and quarter resolution, unclamped.
    pub outputs: [Tensor; 3],
    /// Temporal activation map `[slots * B, C_0, 1, 1]`, slot-major.
    pub z0: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
}

impl Model {
    pub fn specs(config: &ModelConfig) -> SpecList {
        let mut specs = SpecList::default();
        crate::encoders::declare(config, &mut specs);
        etes::declare(config, &mut specs);
        crate::fusion::declare(config, &mut specs);
        specs
    }

    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = Params::init(&Self::specs(&config), seed);
        Ok(Model { config, params })
    }

    /// Forward pass over already-recorded inputs: `blur` `[B, C_in, H, W]`,
    /// `past` `[B, bins, H, W]`, `units` `[N * B, 2, H, W]` (unit-major).
    pub fn forward_vars(
        g: &mut Graph,
        p: &Bound,
        cfg: &ModelConfig,
        blur: Var,
        past: Var,
        units: Var,
    ) -> Result<Forward> {
        let shape = g.value(blur).shape().to_vec();
        let m = cfg.size_multiple();
        if shape.len() != 4 || !shape[2].is_multiple_of(m) || !shape[3].is_multiple_of(m) {
            return Err(ModelError::Input(format!(
                "blur must be [B, C, H, W] with sides divisible by {m}, got {shape:?}"
            )));
        }
        let frame = encode_frame(g, p, blur)?;
        let past_f = encode_past(g, p, past)?;
        let current = encode_current(g, p, cfg, units, cfg.units)?;
        let events = assemble_event_pyramid(g, past_f, current)?;
        let selection = etes::run(g, p, cfg, frame, events)?;
        let fused = fuse_all(g, p, cfg, frame, selection.selected)?;
        let outputs = decode(g, p, fused)?;
        Ok(Forward {
            blur,
            past,
            units,
            frame,
            events,
            selection,
            fused,
            outputs,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, batch: &Batch) -> Result<Forward> {
        let blur = g.constant(batch.blur.clone());
        let past = g.constant(batch.past.clone());
        let units = g.constant(batch.units.clone());
        Self::forward_vars(g, p, &self.config, blur, past, units)
    }

    /// Builds the training objective; returns the forward handles, the ground-truth
    /// pyramid constants and the scalar loss.
    pub fn loss(
        &self,
        g: &mut Graph,
        p: &Bound,
        batch: &Batch,
        loss_cfg: &LossConfig,
    ) -> Result<(Forward, [Var; 3], Var)> {
        let fwd = self.forward(g, p, batch)?;
        let gts = gt_pyramid(&batch.sharp)?;
        let targets = gts.map(|t| g.constant(t));
        let loss = charbonnier_loss(g, fwd.outputs, targets, loss_cfg)?;
        Ok((fwd, targets, loss))
    }

    pub fn predict(&self, batch: &Batch) -> Result<Prediction> {
        let mut g = Graph::new();
        let p = self.params.bind_with(&mut g, |_| false);
        let fwd = self.forward(&mut g, &p, batch)?;
        Ok(Prediction {
            outputs: fwd.outputs.map(|v| g.value(v).clone()),
            z0: g.value(fwd.selection.z0).clone(),
        })
    }

    pub fn to_archive(&self, archive: &mut TensorArchive) {
        archive.insert(CONFIG_TENSOR, config_to_tensor(&self.config));
        self.params.to_archive(PARAM_PREFIX, archive);
    }

    pub fn from_archive(archive: &TensorArchive) -> Result<Self> {
        let meta = archive
            .get(CONFIG_TENSOR)
            .ok_or_else(|| ModelError::MissingTensor(CONFIG_TENSOR.into()))?;
        let config = config_from_tensor(meta)?;
        let mut model = Model::new(config, 0)?;
        model.params.load_archive(PARAM_PREFIX, archive)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut a = TensorArchive::new();
        self.to_archive(&mut a);
        Ok(a.write(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&TensorArchive::read(path)?)
    }
}

fn config_fields(c: &ModelConfig) -> Vec<usize> {
    let mut v = vec![c.in_channels];
    v.extend(c.frame_channels);
    v.extend(c.event_channels);
    v.extend([
        c.hidden_channels,
        c.bins,
        c.units,
        c.dynamic_kernel,
        c.filter_conv_kernel,
        c.gn_groups,
        c.attention_reduction,
        c.spatial_kernel,
    ]);
    v
}

/// Structural constants as a small integer-valued tensor, so checkpoints are self-describing.
pub fn config_to_tensor(c: &ModelConfig) -> Tensor {
    let v: Vec<f64> = config_fields(c).into_iter().map(|x| x as f64).collect();
    Tensor::new(vec![v.len()], v).expect("1-D shape")
}

pub fn config_from_tensor(t: &Tensor) -> Result<ModelConfig> {
    let expected = config_fields(&ModelConfig::default()).len();
    let d = t.data();
    if t.rank() != 1 || d.len() != expected {
        return Err(ModelError::Shape {
            name: CONFIG_TENSOR.into(),
            expected: vec![expected],
            actual: t.shape().to_vec(),
        });
    }
    if d.iter().any(|v| v.fract() != 0.0 || *v < 0.0 || *v > 1e6) {
        return Err(ModelError::Config(format!("{CONFIG_TENSOR} holds non-integer fields")));
    }
    let u: Vec<usize> = d.iter().map(|&v| v as usize).collect();
    let c = ModelConfig {
        in_channels: u[0],
        frame_channels: [u[1], u[2], u[3]],
        event_channels: [u[4], u[5], u[6]],
        hidden_channels: u[7],
        bins: u[8],
        units: u[9],
        dynamic_kernel: u[10],
        filter_conv_kernel: u[11],
        gn_groups: u[12],
        attention_reduction: u[13],
        spatial_kernel: u[14],
    };
    c.validate()?;
    Ok(c)
}
