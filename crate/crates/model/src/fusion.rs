//! Cross-modal feature fusion, the coarse-to-fine decoder and the multi-scale
//! Charbonnier objective.

use edeblur_tensor::{compensated_sum, kernels, Graph, Tensor, Var};

use crate::config::{LossConfig, ModelConfig};
use crate::error::{ModelError, Result};
use crate::layers::{conv, conv_relu, slot_mean, spatial};
use crate::params::{Bound, SpecList};

pub fn declare(cfg: &ModelConfig, specs: &mut SpecList) {
    let k2 = cfg.dynamic_kernel * cfg.dynamic_kernel;
    for s in 0..3 {
        let (c, e) = (cfg.frame_channels[s], cfg.event_channels[s]);
        let name = |part: &str| format!("fuse.s{s}.{part}");
        specs.conv(&name("proj"), e, c, 1);
        specs.conv(&name("att_c1"), c, c / cfg.attention_reduction, 1);
        specs.conv(&name("att_c2"), c / cfg.attention_reduction, c, 1);
        specs.conv(&name("att_s_frame"), 2, 1, cfg.spatial_kernel);
        specs.conv(&name("att_s_event"), 2, 1, cfg.spatial_kernel);
        specs.conv(&name("filter_a"), e, e, cfg.filter_conv_kernel);
        // Scaled so the initial dynamic filters have taps of order 1/k^2.
        specs.conv_gain(&name("filter_b"), e, c * k2, cfg.filter_conv_kernel, 1.0 / k2 as f64);
        specs.conv(&name("out"), c + e, c, 1);
    }
    for s in 0..3 {
        specs.conv(&format!("dec.s{s}.head"), cfg.frame_channels[s], cfg.in_channels, 3);
    }
}

/// Frame-branch enhancement `F + AttC*F + AttS*F + K (*) F`.
pub fn enhance_frame(g: &mut Graph, frame: Var, att_c: Var, att_s: Var, filters: Var) -> Result<Var> {
    let ch = g.mul_channel(frame, att_c)?;
    let sp = g.mul_spatial(frame, att_s)?;
    let dy = g.dynamic_conv(frame, filters)?;
    let a = g.add(frame, ch)?;
    let b = g.add(sp, dy)?;
    Ok(g.add(a, b)?)
}

/// Intermediate tensors of one fusion scale.
#[derive(Debug, Clone, Copy)]
pub struct FuseParts {
    pub calibrated: Var,
    pub att_c: Var,
    pub att_s: Var,
    pub filters: Var,
    pub frame_enhanced: Var,
    pub event_enhanced: Var,
    /// Per-slot fused features `[slots * B, C_s, H, W]`.
    pub fused_slots: Var,
}

/// Fuses frame features `[B, C_s, H, W]` with selected event features
/// `[slots * B, E_s, H, W]` at scale `s`.
pub fn fuse(
    g: &mut Graph,
    p: &Bound,
    cfg: &ModelConfig,
    s: usize,
    frame: Var,
    events: Var,
) -> Result<FuseParts> {
    let name = |part: &str| format!("fuse.s{s}.{part}");
    let fb = g.repeat0(frame, cfg.slots())?;
    let projected = conv(g, p, &name("proj"), events, 1)?;
    let calibrated = g.add(fb, projected)?;

    let pooled = g.gap(calibrated)?;
    let hidden = conv_relu(g, p, &name("att_c1"), pooled, 1)?;
    let logits = conv(g, p, &name("att_c2"), hidden, 1)?;
    let att_c = g.sigmoid(logits)?;

    let cp = g.channel_pool(calibrated)?;
    let logits = conv(g, p, &name("att_s_frame"), cp, 1)?;
    let att_s = g.sigmoid(logits)?;

    let fa = conv_relu(g, p, &name("filter_a"), events, 1)?;
    let filters = conv(g, p, &name("filter_b"), fa, 1)?;

    let frame_enhanced = enhance_frame(g, fb, att_c, att_s, filters)?;

    let ep = g.channel_pool(events)?;
    let logits = conv(g, p, &name("att_s_event"), ep, 1)?;
    let event_gate = g.sigmoid(logits)?;
    let event_enhanced = g.mul_spatial(events, event_gate)?;

    let joined = g.concat_channels(&[frame_enhanced, event_enhanced])?;
    let fused_slots = conv(g, p, &name("out"), joined, 1)?;
    Ok(FuseParts {
        calibrated,
        att_c,
        att_s,
        filters,
        frame_enhanced,
        event_enhanced,
        fused_slots,
    })
}

/// Fuses all scales and collapses the slot axis by averaging.
pub fn fuse_all(g: &mut Graph, p: &Bound, cfg: &ModelConfig, frame: [Var; 3], events: [Var; 3]) -> Result<[Var; 3]> {
    let mut out = frame;
    for s in 0..3 {
        let parts = fuse(g, p, cfg, s, frame[s], events[s])?;
        out[s] = slot_mean(g, parts.fused_slots, cfg.slots())?;
    }
    Ok(out)
}

/// `O_2 = head(F_2)`, `O_s = head(F_s) + up(O_{s+1})`.
pub fn decode(g: &mut Graph, p: &Bound, fused: [Var; 3]) -> Result<[Var; 3]> {
    let o2 = conv(g, p, "dec.s2.head", fused[2], 1)?;
    let h1 = conv(g, p, "dec.s1.head", fused[1], 1)?;
    let (y1, x1) = spatial(g, h1);
    let up = g.upsample_bilinear(o2, y1, x1)?;
    let o1 = g.add(h1, up)?;
    let h0 = conv(g, p, "dec.s0.head", fused[0], 1)?;
    let (y0, x0) = spatial(g, h0);
    let up = g.upsample_bilinear(o1, y0, x0)?;
    let o0 = g.add(h0, up)?;
    Ok([o0, o1, o2])
}

/// Ground truth at full, half and quarter resolution (2x2 average pooling).
pub fn gt_pyramid(gt: &Tensor) -> Result<[Tensor; 3]> {
    let g1 = kernels::avg_pool2(gt)?;
    let g2 = kernels::avg_pool2(&g1)?;
    Ok([gt.clone(), g1, g2])
}

/// `sum_s lambda_s * mean(sqrt((O_s - G_s)^2 + eps^2))`, accumulated as
/// `eps * sum(lambda) + sum_s lambda_s * mean(excess_s)` so the floor term is rounded once.
pub fn charbonnier_loss(g: &mut Graph, outputs: [Var; 3], targets: [Var; 3], cfg: &LossConfig) -> Result<Var> {
    let mut terms = Vec::with_capacity(3);
    for s in 0..3 {
        let (o, t) = (g.value(outputs[s]).shape(), g.value(targets[s]).shape());
        if o != t {
            return Err(ModelError::Shape {
                name: format!("output scale {s}"),
                expected: t.to_vec(),
                actual: o.to_vec(),
            });
        }
        terms.push((g.charbonnier_excess(outputs[s], targets[s], cfg.eps)?, cfg.lambdas[s]));
    }
    let excess = g.weighted_sum(&terms)?;
    let floor = g.constant(Tensor::scalar(cfg.eps * compensated_sum(cfg.lambdas.into_iter())));
    Ok(g.add(floor, excess)?)
}
