use crate::error::{Result, TensorError};
use crate::kernels;
use crate::tensor::Tensor;

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, stride: usize, pad: usize },
    AddBias { x: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    GroupNorm { x: Var, inv_std: Vec<f64> },
    ChannelAffine { x: Var, gamma: Var, beta: Var },
    Gap(Var),
    MulChannel { x: Var, gate: Var },
    MulSpatial { x: Var, gate: Var },
    Repeat0 { x: Var, times: usize },
    Concat0(Vec<Var>),
    ConcatChannels(Vec<Var>),
    Mean0(Var),
    Narrow0 { x: Var, start: usize },
    ChannelPool { x: Var, argmax: Vec<usize> },
    Upsample(Var),
    DynConv { x: Var, k: Var },
    ChannelRepeat(Var),
    Sum(Var),
    Mean(Var),
    Charbonnier { a: Var, b: Var, eps: f64 },
    WeightedSum(Vec<(Var, f64)>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::AddBias { .. } => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::GroupNorm { .. } => "group_norm",
            Op::ChannelAffine { .. } => "channel_affine",
            Op::Gap(..) => "gap",
            Op::MulChannel { .. } => "mul_channel",
            Op::MulSpatial { .. } => "mul_spatial",
            Op::Repeat0 { .. } => "repeat0",
            Op::Concat0(..) => "concat0",
            Op::ConcatChannels(..) => "concat_channels",
            Op::Mean0(..) => "mean0",
            Op::Narrow0 { .. } => "narrow0",
            Op::ChannelPool { .. } => "channel_pool",
            Op::Upsample(..) => "upsample_bilinear",
            Op::DynConv { .. } => "dynamic_conv",
            Op::ChannelRepeat(..) => "channel_repeat",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Charbonnier { .. } => "charbonnier",
            Op::WeightedSum(..) => "weighted_sum",
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, .. } => vec![*x, *w],
            Op::AddBias { x, b } => vec![*x, *b],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Gap(x)
            | Op::Mean0(x)
            | Op::Upsample(x)
            | Op::ChannelRepeat(x)
            | Op::Sum(x)
            | Op::Mean(x) => vec![*x],
            Op::GroupNorm { x, .. }
            | Op::Repeat0 { x, .. }
            | Op::Narrow0 { x, .. }
            | Op::ChannelPool { x, .. } => vec![*x],
            Op::ChannelAffine { x, gamma, beta } => vec![*x, *gamma, *beta],
            Op::MulChannel { x, gate } | Op::MulSpatial { x, gate } => vec![*x, *gate],
            Op::Concat0(v) | Op::ConcatChannels(v) => v.clone(),
            Op::DynConv { x, k } => vec![*x, *k],
            Op::Charbonnier { a, b, .. } => vec![*a, *b],
            Op::WeightedSum(v) => v.iter().map(|(x, _)| *x).collect(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of primitive applications.
///
/// Nodes are stored in creation order, which is a valid topological order, so
/// the backward pass is a single reverse sweep.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visited: usize,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Number of nodes whose backward rule ran.
    pub fn nodes_visited(&self) -> usize {
        self.visited
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::dim(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
    .expect("shapes checked by caller")
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Every leaf reachable backwards from `root`, in creation order.
    pub fn leaf_ancestors(&self, root: Var) -> Vec<Var> {
        let mut seen = vec![false; root.0 + 1];
        seen[root.0] = true;
        let mut leaves = Vec::new();
        for i in (0..=root.0).rev() {
            if !seen[i] {
                continue;
            }
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                leaves.push(Var(i));
            }
            for p in node.op.parents() {
                seen[p.0] = true;
            }
        }
        leaves.reverse();
        leaves
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        let value = value.ensure_finite(op.name())?;
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push_node(value, op, requires_grad))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let y = kernels::conv2d(self.value(x), self.value(w), stride, pad)?;
        self.push(y, Op::Conv2d { x, w, stride, pad })
    }

    /// Adds a per-channel bias `[C]` to `[N, C, H, W]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let [_, c, h, w] = self.value(x).dims4()?;
        let bias = self.value(b);
        if bias.numel() != c {
            return Err(TensorError::dim(
                "add_bias",
                format!("bias of {} values for {c} channels", bias.numel()),
            ));
        }
        let plane = h * w;
        let mut y = self.value(x).clone();
        for (i, p) in y.data_mut().chunks_mut(plane).enumerate() {
            let bv = bias.data()[i % c];
            p.iter_mut().for_each(|v| *v += bv);
        }
        self.push(y, Op::AddBias { x, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let y = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let y = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let y = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let y = self.value(x).map(|v| v * factor);
        self.push(y, Op::Scale(x, factor))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).map(|v| v.max(0.0));
        self.push(y, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(y, Op::Sigmoid(x))
    }

    /// Group normalization without affine terms; see [`Graph::channel_affine`].
    pub fn group_norm(&mut self, x: Var, groups: usize, eps: f64) -> Result<Var> {
        let cache = kernels::group_norm_cached(self.value(x), groups, eps)?;
        self.push(
            cache.normalized,
            Op::GroupNorm {
                x,
                inv_std: cache.inv_std,
            },
        )
    }

    /// `gamma[c] * x + beta[c]` for `[N, C, H, W]` input.
    pub fn channel_affine(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let [_, c, h, w] = self.value(x).dims4()?;
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.numel() != c || b.numel() != c {
            return Err(TensorError::dim(
                "channel_affine",
                format!("affine params {}/{} for {c} channels", g.numel(), b.numel()),
            ));
        }
        let mut y = self.value(x).clone();
        for (i, p) in y.data_mut().chunks_mut(h * w).enumerate() {
            let (gv, bv) = (g.data()[i % c], b.data()[i % c]);
            p.iter_mut().for_each(|v| *v = gv * *v + bv);
        }
        self.push(y, Op::ChannelAffine { x, gamma, beta })
    }

    pub fn gap(&mut self, x: Var) -> Result<Var> {
        let y = kernels::gap(self.value(x))?;
        self.push(y, Op::Gap(x))
    }

    /// Scales each `(n, c)` plane of `x` by `gate[n, c, 0, 0]`.
    pub fn mul_channel(&mut self, x: Var, gate: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let gd = self.value(gate).dims4()?;
        if gd != [n, c, 1, 1] {
            return Err(TensorError::dim(
                "mul_channel",
                format!("gate {gd:?} for features [{n}, {c}, {h}, {w}]"),
            ));
        }
        let gv = self.value(gate).data().to_vec();
        let mut y = self.value(x).clone();
        for (p, g) in y.data_mut().chunks_mut(h * w).zip(gv) {
            p.iter_mut().for_each(|v| *v *= g);
        }
        self.push(y, Op::MulChannel { x, gate })
    }

    /// Scales every channel of `x` by the spatial map `gate[n, 0, h, w]`.
    pub fn mul_spatial(&mut self, x: Var, gate: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let gd = self.value(gate).dims4()?;
        if gd != [n, 1, h, w] {
            return Err(TensorError::dim(
                "mul_spatial",
                format!("gate {gd:?} for features [{n}, {c}, {h}, {w}]"),
            ));
        }
        let plane = h * w;
        let mut y = self.value(x).clone();
        let gv = self.value(gate).data();
        for (i, p) in y.data_mut().chunks_mut(plane).enumerate() {
            let gp = &gv[(i / c) * plane..][..plane];
            p.iter_mut().zip(gp).for_each(|(v, g)| *v *= g);
        }
        self.push(y, Op::MulSpatial { x, gate })
    }

    /// Tiles `x` `times` times along the leading axis.
    pub fn repeat0(&mut self, x: Var, times: usize) -> Result<Var> {
        if times == 0 {
            return Err(TensorError::config("repeat0", "times must be positive"));
        }
        let v = self.value(x);
        let mut shape = v.shape().to_vec();
        shape[0] *= times;
        let mut data = Vec::with_capacity(v.numel() * times);
        for _ in 0..times {
            data.extend_from_slice(v.data());
        }
        self.push(Tensor::new(shape, data)?, Op::Repeat0 { x, times })
    }

    /// Concatenates along the leading axis.
    pub fn concat0(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::dim("concat0", "nothing to concatenate"))?;
        let tail = self.value(*first).shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            let v = self.value(*p);
            if v.shape()[1..] != tail[..] {
                return Err(TensorError::dim(
                    "concat0",
                    format!("{:?} vs trailing {:?}", v.shape(), tail),
                ));
            }
            lead += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        self.push(Tensor::new(shape, data)?, Op::Concat0(parts.to_vec()))
    }

    /// Concatenates `[N, C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::dim("concat_channels", "nothing to concatenate"))?;
        let [n, _, h, w] = self.value(*first).dims4()?;
        let mut total_c = 0;
        for p in parts {
            let [pn, pc, ph, pw] = self.value(*p).dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(TensorError::dim(
                    "concat_channels",
                    format!("{:?} vs [{n}, _, {h}, {w}]", self.value(*p).shape()),
                ));
            }
            total_c += pc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total_c * plane);
        for ni in 0..n {
            for p in parts {
                let v = self.value(*p);
                let pc = v.numel() / (n * plane);
                data.extend_from_slice(&v.data()[ni * pc * plane..][..pc * plane]);
            }
        }
        let shape = if self.value(*first).rank() == 3 {
            vec![total_c, h, w]
        } else {
            vec![n, total_c, h, w]
        };
        self.push(Tensor::new(shape, data)?, Op::ConcatChannels(parts.to_vec()))
    }

    /// Mean over the leading axis, keeping it with size 1.
    pub fn mean0(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let lead = v.shape()[0];
        if lead == 0 {
            return Err(TensorError::dim("mean0", "empty leading axis"));
        }
        let inner = v.numel() / lead;
        let mut data = vec![0.0; inner];
        for chunk in v.data().chunks(inner) {
            data.iter_mut().zip(chunk).for_each(|(d, c)| *d += c);
        }
        data.iter_mut().for_each(|d| *d /= lead as f64);
        let mut shape = v.shape().to_vec();
        shape[0] = 1;
        self.push(Tensor::new(shape, data)?, Op::Mean0(x))
    }

    pub fn narrow0(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let y = self.value(x).narrow0(start, len)?;
        self.push(y, Op::Narrow0 { x, start })
    }

    /// Channel mean and max stacked as a 2-channel map.
    pub fn channel_pool(&mut self, x: Var) -> Result<Var> {
        let (y, argmax) = kernels::channel_pool(self.value(x))?;
        self.push(y, Op::ChannelPool { x, argmax })
    }

    pub fn upsample_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let y = kernels::upsample_bilinear(self.value(x), out_h, out_w)?;
        self.push(y, Op::Upsample(x))
    }

    pub fn dynamic_conv(&mut self, x: Var, k: Var) -> Result<Var> {
        let y = kernels::dynamic_conv(self.value(x), self.value(k))?;
        self.push(y, Op::DynConv { x, k })
    }

    /// Nearest-neighbour resampling along the channel axis to `out_c` channels.
    pub fn channel_repeat(&mut self, x: Var, out_c: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        if out_c == 0 || c == 0 {
            return Err(TensorError::config("channel_repeat", "zero channels"));
        }
        let plane = h * w;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * out_c * plane);
        for ni in 0..n {
            for co in 0..out_c {
                let ci = co * c / out_c;
                data.extend_from_slice(&src[(ni * c + ci) * plane..][..plane]);
            }
        }
        let shape = if self.value(x).rank() == 3 {
            vec![out_c, h, w]
        } else {
            vec![n, out_c, h, w]
        };
        self.push(Tensor::new(shape, data)?, Op::ChannelRepeat(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let m = v.sum() / v.numel() as f64;
        self.push(Tensor::scalar(m), Op::Mean(x))
    }

    /// Mean over elements of `sqrt((a - b)^2 + eps^2)`.
    pub fn charbonnier(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        same_shape("charbonnier", self.value(a), self.value(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let e2 = eps * eps;
        let total: f64 = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| ((x - y) * (x - y) + e2).sqrt())
            .sum();
        let m = total / av.numel() as f64;
        self.push(Tensor::scalar(m), Op::Charbonnier { a, b, eps })
    }

    /// Mean over elements of `sqrt((a - b)^2 + eps^2) - eps`, evaluated as
    /// `d^2 / (sqrt(d^2 + eps^2) + eps)` so it is exactly zero where `a == b`.
    /// Shares the gradient of [`Graph::charbonnier`].
    pub fn charbonnier_excess(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        same_shape("charbonnier_excess", self.value(a), self.value(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let e2 = eps * eps;
        let terms = av.data().iter().zip(bv.data()).map(|(x, y)| {
            let d2 = (x - y) * (x - y);
            d2 / ((d2 + e2).sqrt() + eps)
        });
        let m = compensated_sum(terms) / av.numel() as f64;
        self.push(Tensor::scalar(m), Op::Charbonnier { a, b, eps })
    }

    /// `sum_i w_i * x_i` over same-shaped inputs.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let (first, _) = terms
            .first()
            .ok_or_else(|| TensorError::dim("weighted_sum", "no terms"))?;
        let shape = self.value(*first).shape().to_vec();
        let mut data = vec![0.0; self.value(*first).numel()];
        for (v, w) in terms {
            let t = self.value(*v);
            if t.shape() != shape.as_slice() {
                return Err(TensorError::dim(
                    "weighted_sum",
                    format!("{:?} vs {:?}", t.shape(), shape),
                ));
            }
            data.iter_mut().zip(t.data()).for_each(|(d, x)| *d += w * x);
        }
        self.push(Tensor::new(shape, data)?, Op::WeightedSum(terms.to_vec()))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).numel() != 1 {
            return Err(TensorError::dim(
                "backward",
                format!("root must be scalar, got {:?}", self.value(root).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape().to_vec(), 1.0));
        let mut visited = 0;
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                visited += 1;
                self.backprop_node(node, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, visited })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        let send = |grads: &mut [Option<Tensor>], v: Var, t: Tensor| {
            if self.nodes[v.0].requires_grad {
                accumulate(grads, v, t);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, stride, pad } => {
                let (gx, gw) =
                    kernels::conv2d_backward(val(*x), val(*w), g, *stride, *pad, wants(*x), wants(*w))?;
                if let Some(gx) = gx {
                    send(grads, *x, gx);
                }
                if let Some(gw) = gw {
                    send(grads, *w, gw);
                }
            }
            Op::AddBias { x, b } => {
                if wants(*b) {
                    let [_, c, h, w] = g.dims4()?;
                    let mut gb = vec![0.0; c];
                    for (i, p) in g.data().chunks(h * w).enumerate() {
                        gb[i % c] += p.iter().sum::<f64>();
                    }
                    send(grads, *b, Tensor::new(val(*b).shape().to_vec(), gb)?);
                }
                send(grads, *x, g.clone());
            }
            Op::Add(a, b) => {
                send(grads, *a, g.clone());
                send(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                send(grads, *a, g.clone());
                send(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    send(grads, *a, zip_map(g, val(*b), |x, y| x * y));
                }
                if wants(*b) {
                    send(grads, *b, zip_map(g, val(*a), |x, y| x * y));
                }
            }
            Op::Scale(x, f) => send(grads, *x, g.map(|v| v * f)),
            Op::Relu(x) => send(
                grads,
                *x,
                zip_map(g, &node.value, |gv, y| if y > 0.0 { gv } else { 0.0 }),
            ),
            Op::Sigmoid(x) => send(grads, *x, zip_map(g, &node.value, |gv, y| gv * y * (1.0 - y))),
            Op::GroupNorm { x, inv_std } => {
                let cache = kernels::GroupNormCache {
                    normalized: node.value.clone(),
                    inv_std: inv_std.clone(),
                };
                send(grads, *x, kernels::group_norm_backward(&cache, g)?);
            }
            Op::ChannelAffine { x, gamma, beta } => {
                let [_, c, h, w] = g.dims4()?;
                let xv = val(*x);
                let gam = val(*gamma).data();
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                let mut gx = g.clone();
                for (i, (gp, xp)) in gx
                    .data_mut()
                    .chunks_mut(h * w)
                    .zip(xv.data().chunks(h * w))
                    .enumerate()
                {
                    let ci = i % c;
                    gg[ci] += gp.iter().zip(xp).map(|(a, b)| a * b).sum::<f64>();
                    gb[ci] += gp.iter().sum::<f64>();
                    gp.iter_mut().for_each(|v| *v *= gam[ci]);
                }
                send(grads, *gamma, Tensor::new(val(*gamma).shape().to_vec(), gg)?);
                send(grads, *beta, Tensor::new(val(*beta).shape().to_vec(), gb)?);
                send(grads, *x, gx);
            }
            Op::Gap(x) => {
                let xv = val(*x);
                let [_, _, h, w] = xv.dims4()?;
                let plane = (h * w) as f64;
                let mut gx = Vec::with_capacity(xv.numel());
                for gv in g.data() {
                    gx.extend(std::iter::repeat_n(gv / plane, h * w));
                }
                send(grads, *x, Tensor::new(xv.shape().to_vec(), gx)?);
            }
            Op::MulChannel { x, gate } => {
                let xv = val(*x);
                let [_, _, h, w] = xv.dims4()?;
                let gate_v = val(*gate).data();
                if wants(*gate) {
                    let gg: Vec<f64> = g
                        .data()
                        .chunks(h * w)
                        .zip(xv.data().chunks(h * w))
                        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p * q).sum())
                        .collect();
                    send(grads, *gate, Tensor::new(val(*gate).shape().to_vec(), gg)?);
                }
                if wants(*x) {
                    let mut gx = g.clone();
                    for (p, gv) in gx.data_mut().chunks_mut(h * w).zip(gate_v) {
                        p.iter_mut().for_each(|v| *v *= gv);
                    }
                    send(grads, *x, gx);
                }
            }
            Op::MulSpatial { x, gate } => {
                let xv = val(*x);
                let [n, c, h, w] = xv.dims4()?;
                let plane = h * w;
                let gate_v = val(*gate).data();
                if wants(*gate) {
                    let mut gg = vec![0.0; n * plane];
                    for (i, (gp, xp)) in g.data().chunks(plane).zip(xv.data().chunks(plane)).enumerate() {
                        let dst = &mut gg[(i / c) * plane..][..plane];
                        for ((d, a), b) in dst.iter_mut().zip(gp).zip(xp) {
                            *d += a * b;
                        }
                    }
                    send(grads, *gate, Tensor::new(val(*gate).shape().to_vec(), gg)?);
                }
                if wants(*x) {
                    let mut gx = g.clone();
                    for (i, p) in gx.data_mut().chunks_mut(plane).enumerate() {
                        let gp = &gate_v[(i / c) * plane..][..plane];
                        p.iter_mut().zip(gp).for_each(|(v, s)| *v *= s);
                    }
                    send(grads, *x, gx);
                }
            }
            Op::Repeat0 { x, times } => {
                let xv = val(*x);
                let inner = xv.numel();
                let mut gx = vec![0.0; inner];
                for chunk in g.data().chunks(inner).take(*times) {
                    gx.iter_mut().zip(chunk).for_each(|(d, s)| *d += s);
                }
                send(grads, *x, Tensor::new(xv.shape().to_vec(), gx)?);
            }
            Op::Concat0(parts) => {
                let mut off = 0;
                for p in parts {
                    let pv = val(*p);
                    let len = pv.numel();
                    if wants(*p) {
                        send(
                            grads,
                            *p,
                            Tensor::new(pv.shape().to_vec(), g.data()[off..off + len].to_vec())?,
                        );
                    }
                    off += len;
                }
            }
            Op::ConcatChannels(parts) => {
                let [n, total_c, h, w] = g.dims4()?;
                let plane = h * w;
                let mut c_off = 0;
                for p in parts {
                    let pv = val(*p);
                    let pc = pv.numel() / (n * plane);
                    if wants(*p) {
                        let mut data = Vec::with_capacity(pv.numel());
                        for ni in 0..n {
                            data.extend_from_slice(
                                &g.data()[(ni * total_c + c_off) * plane..][..pc * plane],
                            );
                        }
                        send(grads, *p, Tensor::new(pv.shape().to_vec(), data)?);
                    }
                    c_off += pc;
                }
            }
            Op::Mean0(x) => {
                let xv = val(*x);
                let lead = xv.shape()[0];
                let scaled: Vec<f64> = g.data().iter().map(|v| v / lead as f64).collect();
                let mut data = Vec::with_capacity(xv.numel());
                for _ in 0..lead {
                    data.extend_from_slice(&scaled);
                }
                send(grads, *x, Tensor::new(xv.shape().to_vec(), data)?);
            }
            Op::Narrow0 { x, start } => {
                let xv = val(*x);
                let inner = xv.numel() / xv.shape()[0];
                let mut data = vec![0.0; xv.numel()];
                data[start * inner..start * inner + g.numel()].copy_from_slice(g.data());
                send(grads, *x, Tensor::new(xv.shape().to_vec(), data)?);
            }
            Op::ChannelPool { x, argmax } => {
                send(
                    grads,
                    *x,
                    kernels::channel_pool_backward(val(*x).shape(), argmax, g)?,
                );
            }
            Op::Upsample(x) => {
                send(grads, *x, kernels::upsample_bilinear_backward(val(*x).shape(), g)?);
            }
            Op::DynConv { x, k } => {
                let (gx, gk) = kernels::dynamic_conv_backward(val(*x), val(*k), g)?;
                send(grads, *x, gx);
                send(grads, *k, gk);
            }
            Op::ChannelRepeat(x) => {
                let xv = val(*x);
                let [n, c, h, w] = xv.dims4()?;
                let [_, out_c, _, _] = g.dims4()?;
                let plane = h * w;
                let mut gx = vec![0.0; xv.numel()];
                for ni in 0..n {
                    for co in 0..out_c {
                        let ci = co * c / out_c;
                        let src = &g.data()[(ni * out_c + co) * plane..][..plane];
                        let dst = &mut gx[(ni * c + ci) * plane..][..plane];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                }
                send(grads, *x, Tensor::new(xv.shape().to_vec(), gx)?);
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                send(grads, *x, Tensor::full(val(*x).shape().to_vec(), gv));
            }
            Op::Mean(x) => {
                let xv = val(*x);
                let gv = g.data()[0] / xv.numel() as f64;
                send(grads, *x, Tensor::full(xv.shape().to_vec(), gv));
            }
            Op::Charbonnier { a, b, eps } => {
                let (av, bv) = (val(*a), val(*b));
                let scale = g.data()[0] / av.numel() as f64;
                let e2 = eps * eps;
                let ga = zip_map(av, bv, |x, y| {
                    let d = x - y;
                    scale * d / (d * d + e2).sqrt()
                });
                if wants(*b) {
                    send(grads, *b, ga.map(|v| -v));
                }
                send(grads, *a, ga);
            }
            Op::WeightedSum(terms) => {
                for (v, w) in terms {
                    send(grads, *v, g.map(|x| x * w));
                }
            }
        }
        Ok(())
    }
}

/// Neumaier-compensated summation.
pub fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}
