use edeblur_tensor::{Graph, Var};

use crate::error::{ModelError, Result};
use crate::params::{Bound, SpecList};

/// Same-padded convolution `name` plus its bias.
pub(crate) fn conv(g: &mut Graph, p: &Bound, name: &str, x: Var, stride: usize) -> Result<Var> {
    let w = p.get(&format!("{name}.w"))?;
    let b = p.get(&format!("{name}.b"))?;
    let k = g.value(w).shape()[2];
    let y = g.conv2d(x, w, stride, k / 2)?;
    Ok(g.add_bias(y, b)?)
}

pub(crate) fn conv_relu(g: &mut Graph, p: &Bound, name: &str, x: Var, stride: usize) -> Result<Var> {
    let y = conv(g, p, name, x, stride)?;
    Ok(g.relu(y)?)
}

pub(crate) fn group_norm_affine(g: &mut Graph, p: &Bound, name: &str, x: Var, groups: usize) -> Result<Var> {
    let n = g.group_norm(x, groups, 1e-5)?;
    let gamma = p.get(&format!("{name}.gamma"))?;
    let beta = p.get(&format!("{name}.beta"))?;
    Ok(g.channel_affine(n, gamma, beta)?)
}

/// Declares a three-level pyramid: two 3x3 conv+ReLU per level, stride 2 entering levels 1 and 2.
pub(crate) fn declare_pyramid(specs: &mut SpecList, prefix: &str, input: usize, widths: [usize; 3]) {
    let mut c = input;
    for (s, &w) in widths.iter().enumerate() {
        specs.conv(&format!("{prefix}.s{s}.a"), c, w, 3);
        specs.conv(&format!("{prefix}.s{s}.b"), w, w, 3);
        c = w;
    }
}

pub(crate) fn pyramid(g: &mut Graph, p: &Bound, prefix: &str, x: Var) -> Result<[Var; 3]> {
    let mut out = [x; 3];
    let mut cur = x;
    for (s, slot) in out.iter_mut().enumerate() {
        let stride = if s == 0 { 1 } else { 2 };
        cur = conv_relu(g, p, &format!("{prefix}.s{s}.a"), cur, stride)?;
        cur = conv_relu(g, p, &format!("{prefix}.s{s}.b"), cur, 1)?;
        *slot = cur;
    }
    Ok(out)
}

/// Averages the `slots` groups of a slot-major `[slots * B, ...]` tensor into `[B, ...]`.
pub(crate) fn slot_mean(g: &mut Graph, x: Var, slots: usize) -> Result<Var> {
    let lead = g.value(x).shape()[0];
    if slots == 0 || !lead.is_multiple_of(slots) {
        return Err(ModelError::Input(format!(
            "leading axis {lead} is not a multiple of {slots} slots"
        )));
    }
    let b = lead / slots;
    let mut terms = Vec::with_capacity(slots);
    for t in 0..slots {
        terms.push((g.narrow0(x, t * b, b)?, 1.0 / slots as f64));
    }
    Ok(g.weighted_sum(&terms)?)
}

pub(crate) fn spatial(g: &Graph, x: Var) -> (usize, usize) {
    let s = g.value(x).shape();
    (s[s.len() - 2], s[s.len() - 1])
}
