//! Forward and backward kernels for the image primitives.
//!
//! These are plain functions over [`Tensor`] values; the graph in
//! [`crate::Graph`] records them and calls the matching backward routine.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Output positions `o` in `lo..hi` for which `o * stride + offset` lands in `0..in_len`.
fn valid_range(out_len: usize, in_len: usize, stride: usize, offset: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset < 0 { ((-offset) + s - 1) / s } else { 0 };
    let last_in = in_len as isize - 1 - offset;
    if last_in < 0 {
        return (0, 0);
    }
    let hi = ((last_in / s) + 1).min(out_len as isize);
    let lo = lo.min(hi);
    (lo as usize, hi as usize)
}

fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (len + 2 * pad).checked_sub(k).map(|v| v / stride + 1)
}

struct ConvGeom {
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    k: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

fn conv_geometry(input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<ConvGeom> {
    let [n, ci, h, w] = input.dims4()?;
    let (co, kci, kh, kw) = match *kernel.shape() {
        [a, b, c, d] => (a, b, c, d),
        _ => {
            return Err(TensorError::dim(
                "conv2d",
                format!("kernel must be rank 4, got {:?}", kernel.shape()),
            ))
        }
    };
    if kci != ci {
        return Err(TensorError::dim(
            "conv2d",
            format!("input has {ci} channels, kernel expects {kci}"),
        ));
    }
    if kh != kw {
        return Err(TensorError::dim("conv2d", "kernel must be square"));
    }
    if stride == 0 {
        return Err(TensorError::config("conv2d", "stride must be positive"));
    }
    let ho = conv_out_len(h, kh, stride, pad);
    let wo = conv_out_len(w, kw, stride, pad);
    match (ho, wo) {
        (Some(ho), Some(wo)) => Ok(ConvGeom {
            n,
            ci,
            h,
            w,
            co,
            k: kh,
            ho,
            wo,
            stride,
            pad,
        }),
        _ => Err(TensorError::dim(
            "conv2d",
            format!("kernel {kh} larger than padded input {h}x{w}"),
        )),
    }
}

fn out_shape(input: &Tensor, n: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    if input.rank() == 3 {
        vec![c, h, w]
    } else {
        vec![n, c, h, w]
    }
}

/// Zero-padded 2-D cross-correlation of `[N, C_in, H, W]` with `[C_out, C_in, k, k]`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = conv_geometry(input, kernel, stride, padding)?;
    let x = input.data();
    let wt = kernel.data();
    let (in_plane, out_plane, kk) = (g.h * g.w, g.ho * g.wo, g.k * g.k);
    let mut out = vec![0.0; g.n * g.co * out_plane];
    for n in 0..g.n {
        for co in 0..g.co {
            let o = &mut out[(n * g.co + co) * out_plane..][..out_plane];
            for ci in 0..g.ci {
                let xin = &x[(n * g.ci + ci) * in_plane..][..in_plane];
                let kern = &wt[(co * g.ci + ci) * kk..][..kk];
                for ky in 0..g.k {
                    let oy_off = ky as isize - g.pad as isize;
                    let (oy_lo, oy_hi) = valid_range(g.ho, g.h, g.stride, oy_off);
                    for kx in 0..g.k {
                        let wv = kern[ky * g.k + kx];
                        let ox_off = kx as isize - g.pad as isize;
                        let (ox_lo, ox_hi) = valid_range(g.wo, g.w, g.stride, ox_off);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = (oy * g.stride) as isize + oy_off;
                            let orow = &mut o[oy * g.wo + ox_lo..oy * g.wo + ox_hi];
                            let ix0 = ((ox_lo * g.stride) as isize + ox_off) as usize;
                            let irow = &xin[iy as usize * g.w..][..g.w];
                            if g.stride == 1 {
                                for (ov, iv) in orow.iter_mut().zip(&irow[ix0..]) {
                                    *ov += wv * iv;
                                }
                            } else {
                                for (j, ov) in orow.iter_mut().enumerate() {
                                    *ov += wv * irow[ix0 + j * g.stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(out_shape(input, g.n, g.co, g.ho, g.wo), out)?.ensure_finite("conv2d")
}

/// Gradients of [`conv2d`] with respect to input and kernel.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
    need_input: bool,
    need_kernel: bool,
) -> Result<(Option<Tensor>, Option<Tensor>)> {
    let g = conv_geometry(input, kernel, stride, padding)?;
    let x = input.data();
    let wt = kernel.data();
    let go = grad_out.data();
    let (in_plane, out_plane, kk) = (g.h * g.w, g.ho * g.wo, g.k * g.k);
    let mut gx = if need_input { vec![0.0; x.len()] } else { Vec::new() };
    let mut gw = if need_kernel { vec![0.0; wt.len()] } else { Vec::new() };
    for n in 0..g.n {
        for co in 0..g.co {
            let gop = &go[(n * g.co + co) * out_plane..][..out_plane];
            for ci in 0..g.ci {
                let xoff = (n * g.ci + ci) * in_plane;
                let koff = (co * g.ci + ci) * kk;
                for ky in 0..g.k {
                    let oy_off = ky as isize - g.pad as isize;
                    let (oy_lo, oy_hi) = valid_range(g.ho, g.h, g.stride, oy_off);
                    for kx in 0..g.k {
                        let widx = koff + ky * g.k + kx;
                        let wv = wt[widx];
                        let ox_off = kx as isize - g.pad as isize;
                        let (ox_lo, ox_hi) = valid_range(g.wo, g.w, g.stride, ox_off);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let ix0 = ((ox_lo * g.stride) as isize + ox_off) as usize;
                        let mut acc = 0.0;
                        for oy in oy_lo..oy_hi {
                            let iy = ((oy * g.stride) as isize + oy_off) as usize;
                            let grow = &gop[oy * g.wo + ox_lo..oy * g.wo + ox_hi];
                            let rbase = xoff + iy * g.w;
                            if g.stride == 1 {
                                if need_kernel {
                                    let irow = &x[rbase + ix0..rbase + ix0 + grow.len()];
                                    acc += grow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                                }
                                if need_input {
                                    let gxrow = &mut gx[rbase + ix0..rbase + ix0 + grow.len()];
                                    for (gv, gr) in gxrow.iter_mut().zip(grow) {
                                        *gv += wv * gr;
                                    }
                                }
                            } else {
                                for (j, gr) in grow.iter().enumerate() {
                                    let ix = rbase + ix0 + j * g.stride;
                                    if need_kernel {
                                        acc += gr * x[ix];
                                    }
                                    if need_input {
                                        gx[ix] += wv * gr;
                                    }
                                }
                            }
                        }
                        if need_kernel {
                            gw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    let gx = if need_input {
        Some(Tensor::new(input.shape().to_vec(), gx)?)
    } else {
        None
    };
    let gw = if need_kernel {
        Some(Tensor::new(kernel.shape().to_vec(), gw)?)
    } else {
        None
    };
    Ok((gx, gw))
}

/// Per-sample group statistics retained for the backward pass.
#[derive(Debug, Clone)]
pub struct GroupNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
}

/// Group normalization without affine parameters.
pub fn group_norm(input: &Tensor, groups: usize, eps: f64) -> Result<Tensor> {
    group_norm_cached(input, groups, eps).map(|c| c.normalized)
}

pub fn group_norm_cached(input: &Tensor, groups: usize, eps: f64) -> Result<GroupNormCache> {
    let [n, c, h, w] = input.dims4()?;
    if groups == 0 || c % groups != 0 {
        return Err(TensorError::config(
            "group_norm",
            format!("{groups} groups do not divide {c} channels"),
        ));
    }
    if eps <= 0.0 {
        return Err(TensorError::config("group_norm", "eps must be positive"));
    }
    let m = (c / groups) * h * w;
    let x = input.data();
    let mut y = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(n * groups);
    for (xs, ys) in x.chunks(m).zip(y.chunks_mut(m)) {
        let mean = xs.iter().sum::<f64>() / m as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
        let is = 1.0 / (var + eps).sqrt();
        for (yv, xv) in ys.iter_mut().zip(xs) {
            *yv = (xv - mean) * is;
        }
        inv_std.push(is);
    }
    let normalized = Tensor::new(input.shape().to_vec(), y)?.ensure_finite("group_norm")?;
    Ok(GroupNormCache {
        normalized,
        inv_std,
    })
}

pub fn group_norm_backward(cache: &GroupNormCache, grad_out: &Tensor) -> Result<Tensor> {
    let groups_total = cache.inv_std.len();
    let m = cache.normalized.numel() / groups_total;
    let y = cache.normalized.data();
    let dy = grad_out.data();
    let mut dx = vec![0.0; y.len()];
    for (gi, is) in cache.inv_std.iter().enumerate() {
        let r = gi * m..(gi + 1) * m;
        let (ys, dys) = (&y[r.clone()], &dy[r.clone()]);
        let mean_dy = dys.iter().sum::<f64>() / m as f64;
        let mean_dyy = dys.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>() / m as f64;
        for ((d, dyv), yv) in dx[r].iter_mut().zip(dys).zip(ys) {
            *d = is * (dyv - mean_dy - yv * mean_dyy);
        }
    }
    Tensor::new(cache.normalized.shape().to_vec(), dx)
}

/// Global average pooling over the spatial axes; keeps rank with `H = W = 1`.
pub fn gap(input: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = input.dims4()?;
    if h == 0 || w == 0 {
        return Err(TensorError::dim("gap", "empty spatial extent"));
    }
    let plane = h * w;
    let data = input
        .data()
        .chunks(plane)
        .map(|p| p.iter().sum::<f64>() / plane as f64)
        .collect();
    Tensor::new(out_shape(input, n, c, 1, 1), data)
}

fn dynamic_kernel_size(c: usize, planes: usize) -> Result<usize> {
    if c == 0 || !planes.is_multiple_of(c) {
        return Err(TensorError::dim(
            "dynamic_conv",
            format!("{planes} kernel planes is not a multiple of {c} channels"),
        ));
    }
    let kk = planes / c;
    let k = (kk as f64).sqrt().round() as usize;
    if k * k != kk || k.is_multiple_of(2) {
        return Err(TensorError::dim(
            "dynamic_conv",
            format!("{kk} taps per channel is not an odd square"),
        ));
    }
    Ok(k)
}

fn dynamic_geometry(input: &Tensor, kernels: &Tensor) -> Result<([usize; 4], usize)> {
    let dims = input.dims4()?;
    let [kn, kp, kh, kw] = kernels.dims4()?;
    let [n, c, h, w] = dims;
    if kn != n || kh != h || kw != w {
        return Err(TensorError::dim(
            "dynamic_conv",
            format!("input {:?} vs kernels {:?}", input.shape(), kernels.shape()),
        ));
    }
    Ok((dims, dynamic_kernel_size(c, kp)?))
}

/// Per-pixel convolution: each output pixel uses its own `k x k` kernel per channel.
///
/// Kernel planes are ordered channel-major: plane `c * k * k + dy * k + dx`.
pub fn dynamic_conv(input: &Tensor, kernels: &Tensor) -> Result<Tensor> {
    let ([n, c, h, w], k) = dynamic_geometry(input, kernels)?;
    let r = (k / 2) as isize;
    let (x, kd) = (input.data(), kernels.data());
    let plane = h * w;
    let mut out = vec![0.0; x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let xin = &x[(ni * c + ci) * plane..][..plane];
            let o = &mut out[(ni * c + ci) * plane..][..plane];
            for tap in 0..k * k {
                let (dy, dx) = ((tap / k) as isize - r, (tap % k) as isize - r);
                let kp = &kd[((ni * c + ci) * k * k + tap) * plane..][..plane];
                let (y_lo, y_hi) = valid_range(h, h, 1, dy);
                let (x_lo, x_hi) = valid_range(w, w, 1, dx);
                for y in y_lo..y_hi {
                    let iy = (y as isize + dy) as usize;
                    let ix0 = (x_lo as isize + dx) as usize;
                    let len = x_hi - x_lo;
                    let orow = &mut o[y * w + x_lo..][..len];
                    let krow = &kp[y * w + x_lo..][..len];
                    let irow = &xin[iy * w + ix0..][..len];
                    for ((ov, kv), iv) in orow.iter_mut().zip(krow).zip(irow) {
                        *ov += kv * iv;
                    }
                }
            }
        }
    }
    Tensor::new(input.shape().to_vec(), out)?.ensure_finite("dynamic_conv")
}

pub fn dynamic_conv_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let ([n, c, h, w], k) = dynamic_geometry(input, kernels)?;
    let r = (k / 2) as isize;
    let (x, kd, go) = (input.data(), kernels.data(), grad_out.data());
    let plane = h * w;
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; kd.len()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            for tap in 0..k * k {
                let (dy, dx) = ((tap / k) as isize - r, (tap % k) as isize - r);
                let kbase = ((ni * c + ci) * k * k + tap) * plane;
                let (y_lo, y_hi) = valid_range(h, h, 1, dy);
                let (x_lo, x_hi) = valid_range(w, w, 1, dx);
                let len = x_hi - x_lo;
                for y in y_lo..y_hi {
                    let iy = (y as isize + dy) as usize;
                    let ix0 = (x_lo as isize + dx) as usize;
                    let grow = &go[base + y * w + x_lo..][..len];
                    let krow = &kd[kbase + y * w + x_lo..][..len];
                    let irow = &x[base + iy * w + ix0..][..len];
                    let gkrow = &mut gk[kbase + y * w + x_lo..][..len];
                    for ((gkv, gv), iv) in gkrow.iter_mut().zip(grow).zip(irow) {
                        *gkv = gv * iv;
                    }
                    let gxrow = &mut gx[base + iy * w + ix0..][..len];
                    for ((gxv, gv), kv) in gxrow.iter_mut().zip(grow).zip(krow) {
                        *gxv += gv * kv;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), gx)?,
        Tensor::new(kernels.shape().to_vec(), gk)?,
    ))
}

/// Source indices and weights of one output coordinate of a linear resampler.
#[derive(Debug, Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    w1: f64,
}

fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            Tap {
                i0,
                i1,
                w1: src - i0 as f64,
            }
        })
        .collect()
}

/// Bilinear resize with `align_corners = false` semantics.
pub fn upsample_bilinear(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [n, c, h, w] = input.dims4()?;
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(TensorError::dim("upsample_bilinear", "empty spatial extent"));
    }
    let (ty, tx) = (bilinear_taps(h, out_h), bilinear_taps(w, out_w));
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for p in x.chunks(h * w) {
        for a in &ty {
            let (r0, r1) = (&p[a.i0 * w..][..w], &p[a.i1 * w..][..w]);
            for b in &tx {
                let top = r0[b.i0] * (1.0 - b.w1) + r0[b.i1] * b.w1;
                let bot = r1[b.i0] * (1.0 - b.w1) + r1[b.i1] * b.w1;
                out.push(top * (1.0 - a.w1) + bot * a.w1);
            }
        }
    }
    Tensor::new(out_shape(input, n, c, out_h, out_w), out)
}

pub fn upsample_bilinear_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let probe = Tensor::zeros(input_shape.to_vec());
    let [_, _, h, w] = probe.dims4()?;
    let [_, _, oh, ow] = grad_out.dims4()?;
    let (ty, tx) = (bilinear_taps(h, oh), bilinear_taps(w, ow));
    let mut gx = probe.into_data();
    for (gp, gop) in gx.chunks_mut(h * w).zip(grad_out.data().chunks(oh * ow)) {
        for (yo, a) in ty.iter().enumerate() {
            for (xo, b) in tx.iter().enumerate() {
                let g = gop[yo * ow + xo];
                let (gt, gb) = (g * (1.0 - a.w1), g * a.w1);
                gp[a.i0 * w + b.i0] += gt * (1.0 - b.w1);
                gp[a.i0 * w + b.i1] += gt * b.w1;
                gp[a.i1 * w + b.i0] += gb * (1.0 - b.w1);
                gp[a.i1 * w + b.i1] += gb * b.w1;
            }
        }
    }
    Tensor::new(input_shape.to_vec(), gx)
}

/// 2x2 average pooling (stride 2). Spatial dims must be even.
pub fn avg_pool2(input: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = input.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::dim(
            "avg_pool2",
            format!("spatial size {h}x{w} is not even"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for p in input.data().chunks(h * w) {
        for y in 0..oh {
            for x in 0..ow {
                let s = p[2 * y * w + 2 * x]
                    + p[2 * y * w + 2 * x + 1]
                    + p[(2 * y + 1) * w + 2 * x]
                    + p[(2 * y + 1) * w + 2 * x + 1];
                out.push(0.25 * s);
            }
        }
    }
    Tensor::new(out_shape(input, n, c, oh, ow), out)
}

/// Channel-wise mean and max stacked into a 2-channel map, plus the argmax channel per pixel.
pub fn channel_pool(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let [n, c, h, w] = input.dims4()?;
    if c == 0 {
        return Err(TensorError::dim("channel_pool", "zero channels"));
    }
    let plane = h * w;
    let x = input.data();
    let mut out = vec![0.0; n * 2 * plane];
    let mut arg = vec![0usize; n * plane];
    for ni in 0..n {
        let xs = &x[ni * c * plane..][..c * plane];
        let (mean, rest) = out[ni * 2 * plane..][..2 * plane].split_at_mut(plane);
        let amax = &mut arg[ni * plane..][..plane];
        mean.copy_from_slice(&xs[..plane]);
        rest.copy_from_slice(&xs[..plane]);
        for ci in 1..c {
            let xc = &xs[ci * plane..][..plane];
            for p in 0..plane {
                mean[p] += xc[p];
                if xc[p] > rest[p] {
                    rest[p] = xc[p];
                    amax[p] = ci;
                }
            }
        }
        for v in mean.iter_mut() {
            *v /= c as f64;
        }
    }
    Ok((Tensor::new(out_shape(input, n, 2, h, w), out)?, arg))
}

pub fn channel_pool_backward(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor,
) -> Result<Tensor> {
    let probe = Tensor::zeros(input_shape.to_vec());
    let [n, c, h, w] = probe.dims4()?;
    let plane = h * w;
    let go = grad_out.data();
    let mut gx = probe.into_data();
    for ni in 0..n {
        let (gmean, gmax) = go[ni * 2 * plane..][..2 * plane].split_at(plane);
        for ci in 0..c {
            let gxs = &mut gx[(ni * c + ci) * plane..][..plane];
            for p in 0..plane {
                gxs[p] = gmean[p] / c as f64;
                if argmax[ni * plane + p] == ci {
                    gxs[p] += gmax[p];
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), gx)
}
