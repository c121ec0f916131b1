//! Blur-frame, past-event and recurrent current-event encoders.

use edeblur_tensor::{Graph, Var};

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::layers::{conv, conv_relu, declare_pyramid, pyramid};
use crate::params::{Bound, SpecList};

pub fn declare(cfg: &ModelConfig, specs: &mut SpecList) {
    let [e0, e1, e2] = cfg.event_channels;
    let ch = cfg.hidden_channels;
    declare_pyramid(specs, "frame", cfg.in_channels, cfg.frame_channels);
    declare_pyramid(specs, "past", cfg.bins, cfg.event_channels);
    specs.conv("rnn.f1.a", 2, e0, 3);
    specs.conv("rnn.f1.b", e0, e0, 3);
    specs.conv("rnn.f2.down", e0, e1, 3);
    specs.conv("rnn.f2.mix", e1 + ch, e1, 3);
    specs.conv("rnn.fh.a", e1, ch, 3);
    specs.conv("rnn.fh.b", ch, ch, 3);
    specs.conv("rnn.f3.a", e1, e2, 3);
    specs.conv("rnn.f3.b", e2, e2, 3);
}

/// `[B, C_in, H, W]` blur frames to per-scale `[B, C_s, H/2^s, W/2^s]`.
pub fn encode_frame(g: &mut Graph, p: &Bound, blur: Var) -> Result<[Var; 3]> {
    pyramid(g, p, "frame", blur)
}

/// `[B, bins, H, W]` past-period voxel grids to per-scale event features.
pub fn encode_past(g: &mut Graph, p: &Bound, voxel: Var) -> Result<[Var; 3]> {
    pyramid(g, p, "past", voxel)
}

/// Recurrent state at scale 1, zero before the first unit.
#[derive(Debug, Clone, Copy)]
pub struct RnnState {
    pub hidden: Var,
    pub step: usize,
}

impl RnnState {
    pub fn zeros(g: &mut Graph, batch: usize, channels: usize, h: usize, w: usize) -> Self {
        RnnState {
            hidden: g.constant(edeblur_tensor::Tensor::zeros(vec![batch, channels, h, w])),
            step: 0,
        }
    }
}

/// One recurrent step on the scale-0 features of a single unit. Returns the
/// unit's scale-1 features and advances the state.
pub fn rnn_step(g: &mut Graph, p: &Bound, s0: Var, state: &mut RnnState) -> Result<Var> {
    let down = conv_relu(g, p, "rnn.f2.down", s0, 2)?;
    let joined = g.concat_channels(&[down, state.hidden])?;
    let s1 = conv_relu(g, p, "rnn.f2.mix", joined, 1)?;
    let h = conv_relu(g, p, "rnn.fh.a", s1, 1)?;
    state.hidden = conv_relu(g, p, "rnn.fh.b", h, 1)?;
    state.step += 1;
    Ok(s1)
}

/// Encodes `units` (`[N * B, 2, H, W]`, unit-major so unit `n` of sample `b`
/// sits at `n * B + b`) with weights shared across units. Outputs keep the same layout.
pub fn encode_current(
    g: &mut Graph,
    p: &Bound,
    cfg: &ModelConfig,
    units: Var,
    n_units: usize,
) -> Result<[Var; 3]> {
    let shape = g.value(units).shape().to_vec();
    if shape.len() != 4 || shape[1] != 2 || n_units == 0 || !shape[0].is_multiple_of(n_units) {
        return Err(ModelError::Input(format!(
            "event units must be [N*B, 2, H, W] with N = {n_units}, got {shape:?}"
        )));
    }
    let batch = shape[0] / n_units;
    let a = conv_relu(g, p, "rnn.f1.a", units, 1)?;
    let s0 = conv_relu(g, p, "rnn.f1.b", a, 1)?;
    let (h, w) = (shape[2].div_ceil(2), shape[3].div_ceil(2));
    let mut state = RnnState::zeros(g, batch, cfg.hidden_channels, h, w);
    let mut s1_parts = Vec::with_capacity(n_units);
    for n in 0..n_units {
        let unit = g.narrow0(s0, n * batch, batch)?;
        s1_parts.push(rnn_step(g, p, unit, &mut state)?);
    }
    let s1 = g.concat0(&s1_parts)?;
    let f3 = conv_relu(g, p, "rnn.f3.a", s1, 2)?;
    let s2 = conv(g, p, "rnn.f3.b", f3, 1)?;
    let s2 = g.relu(s2)?;
    Ok([s0, s1, s2])
}

/// Slot 0 holds the past period, slots `1..=N` the current units in time order.
pub fn assemble_event_pyramid(g: &mut Graph, past: [Var; 3], current: [Var; 3]) -> Result<[Var; 3]> {
    let mut out = past;
    for s in 0..3 {
        out[s] = g.concat0(&[past[s], current[s]])?;
    }
    Ok(out)
}
