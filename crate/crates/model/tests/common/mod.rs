#![allow(dead_code)]

use edeblur_model::{Bound, ModelConfig, ModelError, Params};
use edeblur_tensor::{grad_check, GradCheckConfig, Graph, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        in_channels: 1,
        frame_channels: [4, 6, 8],
        event_channels: [4, 4, 6],
        hidden_channels: 4,
        bins: 3,
        units: 2,
        dynamic_kernel: 3,
        filter_conv_kernel: 3,
        gn_groups: 2,
        attention_reduction: 2,
        spatial_kernel: 3,
    }
}

pub fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

/// Unwraps model errors inside gradient-check closures.
pub fn te(e: ModelError) -> TensorError {
    match e {
        ModelError::Tensor(t) => t,
        other => panic!("unexpected model error: {other}"),
    }
}

/// Scalar probe `sum(x * w)` with a fixed pseudo-random `w`.
pub fn project(g: &mut Graph, x: Var, seed: u64) -> Result<Var, TensorError> {
    let w = random(g.value(x).shape(), seed, -1.0, 1.0);
    let w = g.constant(w);
    let m = g.mul(x, w)?;
    g.sum(m)
}

pub fn project_all(g: &mut Graph, xs: &[Var], seed: u64) -> Result<Var, TensorError> {
    let mut terms = Vec::new();
    for (i, &x) in xs.iter().enumerate() {
        terms.push((project(g, x, seed + i as u64)?, 1.0));
    }
    g.weighted_sum(&terms)
}

/// Parameters bound as constants except `name`, which becomes the probe leaf `x`.
pub fn bind_probe(g: &mut Graph, params: &Params, name: &str, x: Var) -> Bound {
    let mut p = params.bind_with(g, |_| false);
    p.insert(name, x);
    p
}

pub fn gc() -> GradCheckConfig {
    GradCheckConfig::with_tol(1e-6, 1e-4)
}

/// Checks `f` against central differences and panics with the report on failure.
pub fn assert_grad<F>(what: &str, f: F, point: &Tensor, cfg: &GradCheckConfig)
where
    F: Fn(&mut Graph, Var) -> Result<Var, TensorError>,
{
    let r = grad_check(f, point, cfg).unwrap();
    assert!(r.passed, "{what}: {r:?}");
    assert!(r.max_rel_err <= 1e-4, "{what}: {r:?}");
}
