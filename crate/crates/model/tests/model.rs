mod common;

use std::collections::HashSet;

use common::*;
use edeblur_model::fusion::{charbonnier_loss, gt_pyramid};
use edeblur_model::model::{config_from_tensor, config_to_tensor};
use edeblur_model::{Batch, LossConfig, Model, ModelConfig, ModelError, SampleTensors, ToyConfig};
use edeblur_tensor::{Graph, Tensor, Var};

fn tiny_batch(cfg: &ModelConfig, side: usize, batch: usize, seed: u64) -> Batch {
    Batch {
        blur: random(&[batch, 1, side, side], seed, 0.0, 1.0),
        sharp: random(&[batch, 1, side, side], seed + 1, 0.0, 1.0),
        past: random(&[batch, cfg.bins, side, side], seed + 2, -1.0, 1.0),
        units: random(&[cfg.units * batch, 2, side, side], seed + 3, 0.0, 2.0),
        size: batch,
    }
}

/// Loss of the whole network with one input replaced by the probe `x`.
fn model_loss(g: &mut Graph, model: &Model, batch: &Batch, which: &str, x: Var) -> Result<Var, edeblur_tensor::TensorError> {
    let p = if which.contains('.') {
        bind_probe(g, &model.params, which, x)
    } else {
        model.params.bind_with(g, |_| false)
    };
    let pick = |g: &mut Graph, name: &str, t: &Tensor| if name == which { x } else { g.constant(t.clone()) };
    let blur = pick(g, "blur", &batch.blur);
    let past = pick(g, "past", &batch.past);
    let units = pick(g, "units", &batch.units);
    let fwd = Model::forward_vars(g, &p, &model.config, blur, past, units).map_err(te)?;
    let gts = gt_pyramid(&batch.sharp).map_err(te)?.map(|t| g.constant(t));
    charbonnier_loss(g, fwd.outputs, gts, &LossConfig::default()).map_err(te)
}

#[test]
fn full_model_gradient_at_sixteen_pixels() {
    let cfg = tiny_config();
    assert_eq!(cfg.slots(), 3);
    let model = Model::new(cfg.clone(), 1).unwrap();
    let batch = tiny_batch(&cfg, 16, 1, 2);
    let inputs = [("blur", &batch.blur), ("past", &batch.past), ("units", &batch.units)];
    for (name, point) in inputs {
        let f = |g: &mut Graph, x| model_loss(g, &model, &batch, name, x);
        assert_grad(name, f, point, &gc().max_coords(40));
    }
    for name in [
        "frame.s0.a.w",
        "past.s2.b.w",
        "rnn.fh.a.w",
        "etes.s1.event_gn.beta",
        "etes.sfc.s0.w",
        "fuse.s1.filter_b.w",
        "fuse.s2.att_c2.b",
        "dec.s0.head.w",
    ] {
        let f = |g: &mut Graph, x| model_loss(g, &model, &batch, name, x);
        assert_grad(name, f, model.params.get(name).unwrap(), &gc().max_coords(40));
    }
}

#[test]
fn loss_depends_only_on_parameters_and_network_inputs() {
    let cfg = tiny_config();
    let model = Model::new(cfg.clone(), 3).unwrap();
    let batch = tiny_batch(&cfg, 8, 2, 4);
    let mut g = Graph::new();
    let p = model.params.bind(&mut g);
    let (fwd, targets, loss) = model.loss(&mut g, &p, &batch, &LossConfig::default()).unwrap();
    let allowed: HashSet<Var> = p
        .vars()
        .map(|(_, v)| v)
        .chain([fwd.blur, fwd.past, fwd.units])
        .chain(targets)
        .collect();
    let leaves = g.leaf_ancestors(loss);
    assert!(!leaves.is_empty());
    let cfg_loss = LossConfig::default();
    let floor = cfg_loss.eps * cfg_loss.lambdas.iter().sum::<f64>();
    for v in &leaves {
        if allowed.contains(v) {
            continue;
        }
        // Remaining leaves are structural constants: the zero initial
        // recurrent state and the scalar loss floor.
        let t = g.value(*v);
        let zero_state = t.data().iter().all(|&x| x == 0.0);
        let loss_floor = t.numel() == 1 && (t.data()[0] - floor).abs() < 1e-15;
        assert!(zero_state || loss_floor, "loss reaches an unexpected leaf {v:?} {:?}", t.shape());
    }
    // The activation map itself is computed, never fed.
    assert!(!leaves.contains(&fwd.selection.z0));
    // Every trainable leaf the loss touches is a parameter.
    assert!(leaves.iter().filter(|v| g.requires_grad(**v)).all(|v| p.contains(*v)));
}

#[test]
fn forward_shapes() {
    let cfg = tiny_config();
    let model = Model::new(cfg.clone(), 5).unwrap();
    let batch = tiny_batch(&cfg, 16, 2, 6);
    let pred = model.predict(&batch).unwrap();
    for (s, o) in pred.outputs.iter().enumerate() {
        assert_eq!(o.shape(), &[2, 1, 16 >> s, 16 >> s]);
    }
    assert_eq!(pred.z0.shape(), &[cfg.slots() * 2, cfg.event_channels[0], 1, 1]);
}

#[test]
fn odd_sizes_are_rejected() {
    let cfg = tiny_config();
    let model = Model::new(cfg.clone(), 5).unwrap();
    let batch = tiny_batch(&cfg, 10, 1, 6);
    assert!(matches!(model.predict(&batch), Err(ModelError::Input(_))));
}

#[test]
fn config_survives_tensor_encoding() {
    for cfg in [ModelConfig::default(), tiny_config()] {
        assert_eq!(config_from_tensor(&config_to_tensor(&cfg)).unwrap(), cfg);
    }
    assert!(config_from_tensor(&Tensor::scalar(1.0)).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let cfg = tiny_config();
    let model = Model::new(cfg.clone(), 7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.tnsrarc");
    model.save(&path).unwrap();
    let loaded = Model::load(&path).unwrap();
    assert_eq!(loaded.config, cfg);
    // Archives hold 32-bit floats.
    for ((n, a), (m, b)) in model.params.entries().iter().zip(loaded.params.entries()) {
        assert_eq!(n, m);
        assert!(a.max_abs_diff(b) < 1e-6);
    }
    loaded.save(&path).unwrap();
    assert_eq!(Model::load(&path).unwrap(), loaded);
}

#[test]
fn checkpoint_shape_mismatch_is_reported() {
    let small = Model::new(tiny_config(), 8).unwrap();
    let mut a = edeblur_core::formats::archive::TensorArchive::new();
    small.to_archive(&mut a);
    let wider = ModelConfig {
        frame_channels: [8, 6, 8],
        ..tiny_config()
    };
    a.insert("meta/config", config_to_tensor(&wider));
    assert!(matches!(Model::from_archive(&a), Err(ModelError::Shape { .. })));
}

#[test]
fn same_seed_same_initialization() {
    let a = Model::new(tiny_config(), 9).unwrap();
    let b = Model::new(tiny_config(), 9).unwrap();
    let c = Model::new(tiny_config(), 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn toy_samples_feed_the_network() {
    let cfg = ModelConfig {
        units: 8,
        bins: 4,
        ..tiny_config()
    };
    let toy = ToyConfig {
        size: 16,
        ..ToyConfig::default()
    };
    let s = SampleTensors::from_sample(&toy.train_sample(1, 0).unwrap(), &cfg).unwrap();
    assert_eq!(s.units.shape(), &[8, 2, 16, 16]);
    assert_eq!(s.past.shape(), &[4, 16, 16]);
    let model = Model::new(cfg, 11).unwrap();
    let pred = model.predict(&Batch::stack(&[s.clone(), s]).unwrap()).unwrap();
    assert!(pred.outputs[0].first_non_finite().is_none());
}
