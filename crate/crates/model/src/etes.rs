//! Exposure-time event selection: cross-modal correlation of frame and event
//! templates, top-down scale fusion, and a sigmoid temporal activation map
//! that gates event features per (slot, channel).

use edeblur_tensor::{Graph, Var};

use crate::config::ModelConfig;
use crate::error::Result;
use crate::layers::{conv, conv_relu, group_norm_affine, spatial};
use crate::params::{Bound, SpecList};

pub fn declare(cfg: &ModelConfig, specs: &mut SpecList) {
    let c0 = cfg.event_channels[0];
    for s in 0..3 {
        specs.conv(&format!("etes.s{s}.frame"), cfg.frame_channels[s], c0, 1);
        specs.affine(&format!("etes.s{s}.frame_gn"), c0);
        specs.conv(&format!("etes.s{s}.ref_a"), cfg.event_channels[s], c0, 1);
        specs.conv(&format!("etes.s{s}.ref_b"), c0, c0, 3);
        specs.affine(&format!("etes.s{s}.event_gn"), c0);
    }
    for s in 0..3 {
        specs.conv(&format!("etes.sfc.s{s}"), c0, c0, 3);
    }
}

/// Compresses `[B, C_s, H, W]` frame features to the template width and
/// replicates them over `slots` (slot-major). Group norm acts per slot, so it
/// is applied once before replication.
pub fn preprocess_frame(
    g: &mut Graph,
    p: &Bound,
    cfg: &ModelConfig,
    scale: usize,
    frame: Var,
    slots: usize,
) -> Result<Var> {
    let c = conv(g, p, &format!("etes.s{scale}.frame"), frame, 1)?;
    let n = group_norm_affine(g, p, &format!("etes.s{scale}.frame_gn"), c, cfg.gn_groups)?;
    Ok(g.repeat0(n, slots)?)
}

/// Shared-weight (siamese) modulation of every event slot to the template width.
pub fn preprocess_event(g: &mut Graph, p: &Bound, cfg: &ModelConfig, scale: usize, events: Var) -> Result<Var> {
    let a = conv_relu(g, p, &format!("etes.s{scale}.ref_a"), events, 1)?;
    let b = conv(g, p, &format!("etes.s{scale}.ref_b"), a, 1)?;
    group_norm_affine(g, p, &format!("etes.s{scale}.event_gn"), b, cfg.gn_groups)
}

/// `ReLU(event_template * frame_template)`.
pub fn correlate(g: &mut Graph, event_template: Var, frame_template: Var) -> Result<Var> {
    let m = g.mul(event_template, frame_template)?;
    Ok(g.relu(m)?)
}

/// Top-down fusion of the three correlation maps into `Z_0`, `[slots * B, C_0, 1, 1]` in (0, 1).
pub fn sfc_fuse(g: &mut Graph, p: &Bound, corr: [Var; 3]) -> Result<Var> {
    let a2 = conv_relu(g, p, "etes.sfc.s2", corr[2], 1)?;
    let (h1, w1) = spatial(g, corr[1]);
    let up2 = g.upsample_bilinear(a2, h1, w1)?;
    let m1 = g.add(up2, corr[1])?;
    let a1 = conv_relu(g, p, "etes.sfc.s1", m1, 1)?;
    let (h0, w0) = spatial(g, corr[0]);
    let up1 = g.upsample_bilinear(a1, h0, w0)?;
    let m0 = g.add(up1, corr[0])?;
    let a0 = conv(g, p, "etes.sfc.s0", m0, 1)?;
    let pooled = g.gap(a0)?;
    Ok(g.sigmoid(pooled)?)
}

/// `Z_s` for every scale: `Z_0` resampled along channels to each event width.
pub fn activation_maps(g: &mut Graph, cfg: &ModelConfig, z0: Var) -> Result<[Var; 3]> {
    let mut out = [z0; 3];
    for (o, &c) in out.iter_mut().zip(&cfg.event_channels).skip(1) {
        *o = g.channel_repeat(z0, c)?;
    }
    Ok(out)
}

/// Channel-wise gating `Z_s * F(E)_s`.
pub fn select(g: &mut Graph, events: [Var; 3], z: [Var; 3]) -> Result<[Var; 3]> {
    let mut out = events;
    for s in 0..3 {
        out[s] = g.mul_channel(events[s], z[s])?;
    }
    Ok(out)
}

/// Everything the selector produces for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Selection {
    pub z0: Var,
    pub z: [Var; 3],
    pub correlations: [Var; 3],
    pub selected: [Var; 3],
}

/// Runs the full selector on frame features `[B, C_s, ..]` and the slot-major event pyramid.
pub fn run(g: &mut Graph, p: &Bound, cfg: &ModelConfig, frame: [Var; 3], events: [Var; 3]) -> Result<Selection> {
    let slots = cfg.slots();
    let mut correlations = events;
    for s in 0..3 {
        let fb = preprocess_frame(g, p, cfg, s, frame[s], slots)?;
        let fe = preprocess_event(g, p, cfg, s, events[s])?;
        correlations[s] = correlate(g, fe, fb)?;
    }
    let z0 = sfc_fuse(g, p, correlations)?;
    let z = activation_maps(g, cfg, z0)?;
    let selected = select(g, events, z)?;
    Ok(Selection {
        z0,
        z,
        correlations,
        selected,
    })
}
