mod common;

use common::*;
use edeblur_model::train::{log_csv, trailing_mean};
use edeblur_model::{Batch, LossConfig, Model, ModelConfig, ModelError, ToyConfig, TrainConfig, Trainer};
use edeblur_tensor::Tensor;

fn toy() -> ToyConfig {
    ToyConfig {
        size: 16,
        ..ToyConfig::default()
    }
}

fn cfg() -> ModelConfig {
    ModelConfig {
        units: 4,
        bins: 4,
        ..tiny_config()
    }
}

fn trainer(lr: f64, steps: usize, seed: u64) -> Trainer {
    let train = TrainConfig {
        steps,
        batch: 2,
        crop: 16,
        lr,
        seed,
        ..TrainConfig::default()
    };
    Trainer::new(Model::new(cfg(), seed).unwrap(), train, LossConfig::default())
}

fn batch_for(t: &Trainer, step: u64) -> Batch {
    let samples: Vec<_> = (0..2).map(|b| toy().train_sample(3, 2 * step + b).unwrap()).collect();
    t.make_batch(&samples).unwrap()
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let mut t = trainer(0.0, 10, 1);
    let before = t.model.params.clone();
    for step in 0..3 {
        let b = batch_for(&t, step);
        t.step(&b).unwrap();
    }
    for ((_, a), (_, b)) in before.entries().iter().zip(t.model.params.entries()) {
        let bits = |x: &Tensor| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
    assert_eq!(t.step, 3);
}

#[test]
fn identical_seeds_give_identical_loss_traces() {
    let run = || {
        let mut t = trainer(1e-3, 6, 2);
        (0..6)
            .map(|s| {
                let b = batch_for(&t, s);
                t.step(&b).unwrap().loss.to_bits()
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn overfits_a_single_sample() {
    let mut t = trainer(2e-3, 500, 3);
    let sample = toy().train_sample(4, 0).unwrap();
    let batch = t.make_batch(&[sample]).unwrap();
    let losses: Vec<f64> = (0..500).map(|_| t.step(&batch).unwrap().loss).collect();
    let last = *losses.last().unwrap();
    assert!(last < losses[9], "step 10 {} vs final {last}", losses[9]);
    assert!(trailing_mean(&losses, 500, 10) < 0.5 * trailing_mean(&losses, 10, 10));
}

#[test]
fn learning_rate_schedule() {
    let t = TrainConfig {
        steps: 100,
        lr: 1e-4,
        ..TrainConfig::default()
    };
    assert_eq!(t.lr_at(0), 1e-4);
    assert_eq!(t.lr_at(59), 1e-4);
    assert_eq!(t.lr_at(60), 0.5e-4);
    assert_eq!(t.lr_at(80), 0.25e-4);
    assert_eq!(t.lr_at(99), 0.25e-4);
}

#[test]
fn non_finite_values_abort_with_diagnostic() {
    let mut t = trainer(1e-3, 10, 5);
    let b = batch_for(&t, 0);
    let w = t.model.params.get_mut("dec.s0.head.w").unwrap();
    w.data_mut()[0] = f64::INFINITY;
    match t.step(&b) {
        Err(ModelError::Diverged { step, detail }) => {
            assert_eq!(step, 1);
            assert!(!detail.is_empty());
        }
        other => panic!("expected divergence, got {other:?}"),
    }
    assert_eq!(t.step, 0);
}

#[test]
fn resume_restores_optimizer_state() {
    let mut t = trainer(1e-3, 10, 6);
    for s in 0..3 {
        let b = batch_for(&t, s);
        t.step(&b).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.tnsrarc");
    t.save(&path).unwrap();
    let r = Trainer::resume(&path, t.train.clone(), t.loss.clone()).unwrap();
    assert_eq!(r.step, 3);
    assert_eq!(r.adam.t, 3);
    assert_eq!(r.model.config, t.model.config);
    for ((_, a), (_, b)) in t.model.params.entries().iter().zip(r.model.params.entries()) {
        assert!(a.max_abs_diff(b) < 1e-6);
    }
    // Crops are keyed on the step, so the resumed run sees the same next batch.
    assert_eq!(batch_for(&t, 3), batch_for(&r, 3));
}

#[test]
fn crops_stay_inside_the_frame() {
    let toy = ToyConfig {
        size: 24,
        ..ToyConfig::default()
    };
    let mut t = trainer(1e-3, 10, 7);
    t.train.crop = 16;
    let samples: Vec<_> = (0..2).map(|i| toy.train_sample(8, i).unwrap()).collect();
    let b = t.make_batch(&samples).unwrap();
    assert_eq!(b.blur.shape(), &[2, 1, 16, 16]);
    t.train.crop = 32;
    assert!(matches!(t.make_batch(&samples), Err(ModelError::Input(_))));
}

#[test]
fn log_format() {
    let rec = edeblur_model::StepRecord {
        step: 1,
        loss: 0.5,
        lr: 1e-4,
        wall_ms: 12,
    };
    assert_eq!(log_csv(&[rec], true), "step,loss,lr,wall_ms\n1,5e-1,1e-4,12\n");
    assert_eq!(log_csv(&[rec], false), "step,loss,lr\n1,5e-1,1e-4\n");
    assert_eq!(trailing_mean(&[1.0, 2.0, 3.0, 4.0], 4, 2), 3.5);
    assert_eq!(trailing_mean(&[1.0, 2.0], 1, 5), 1.0);
}
