//! Training loop over an arbitrary sample source.

use std::path::Path;
use std::time::Instant;

use edeblur_core::formats::archive::TensorArchive;
use edeblur_core::BlurSample;
use edeblur_tensor::{Graph, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::batch::{Batch, SampleTensors};
use crate::config::{LossConfig, TrainConfig};
use crate::error::{ModelError, Result};
use crate::model::Model;
use crate::optim::Adam;

const STEP_TENSOR: &str = "train/step";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// 1-based index of the completed step.
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: u128,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub adam: Adam,
    pub train: TrainConfig,
    pub loss: LossConfig,
    /// Completed steps.
    pub step: usize,
}

impl Trainer {
    pub fn new(model: Model, train: TrainConfig, loss: LossConfig) -> Self {
        let adam = Adam::new(&model.params, train.beta1, train.beta2, train.adam_eps);
        Trainer {
            model,
            adam,
            train,
            loss,
            step: 0,
        }
    }

    /// Converts samples to tensors and draws one random crop per sample.
    /// The crop RNG is keyed on the step so resumed runs draw the same crops.
    pub fn make_batch(&self, samples: &[BlurSample]) -> Result<Batch> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.train.seed);
        rng.set_stream(self.step as u64);
        let crop = self.train.crop;
        let items = samples
            .iter()
            .map(|s| {
                let t = SampleTensors::from_sample(s, &self.model.config)?;
                if t.width() < crop || t.height() < crop {
                    return Err(ModelError::Input(format!(
                        "sample {}x{} is smaller than the {crop}px crop",
                        t.width(),
                        t.height()
                    )));
                }
                let x = rng.gen_range(0..=t.width() - crop);
                let y = rng.gen_range(0..=t.height() - crop);
                t.crop(x, y, crop)
            })
            .collect::<Result<Vec<_>>>()?;
        Batch::stack(&items)
    }

    /// One optimizer step; a non-finite value anywhere aborts with the offending stage.
    pub fn step(&mut self, batch: &Batch) -> Result<StepRecord> {
        let start = Instant::now();
        let lr = self.train.lr_at(self.step);
        let step = self.step + 1;
        let diverged = |e: ModelError| match e {
            ModelError::Tensor(t @ TensorError::NonFinite { .. }) => ModelError::Diverged {
                step,
                detail: t.to_string(),
            },
            other => other,
        };
        let mut g = Graph::new();
        let p = self.model.params.bind(&mut g);
        let (_, _, loss) = self.model.loss(&mut g, &p, batch, &self.loss).map_err(diverged)?;
        let value = g.value(loss).data()[0];
        let grads = g.backward(loss).map_err(|e| diverged(e.into()))?;
        self.adam.step(&mut self.model.params, &p, &grads, lr)?;
        if let Some((name, _)) = self
            .model
            .params
            .entries()
            .iter()
            .find(|(_, t)| t.first_non_finite().is_some())
        {
            return Err(ModelError::Diverged {
                step,
                detail: format!("parameter {name} became non-finite after the update"),
            });
        }
        self.step = step;
        Ok(StepRecord {
            step,
            loss: value,
            lr,
            wall_ms: start.elapsed().as_millis(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut a = TensorArchive::new();
        self.model.to_archive(&mut a);
        self.adam.to_archive(&self.model.params, &mut a);
        a.insert(STEP_TENSOR, Tensor::scalar(self.step as f64));
        Ok(a.write(path)?)
    }

    /// Restores model, optimizer and step counter from a checkpoint written by [`Trainer::save`].
    pub fn resume(path: &Path, train: TrainConfig, loss: LossConfig) -> Result<Self> {
        let a = TensorArchive::read(path)?;
        let model = Model::from_archive(&a)?;
        let mut t = Trainer::new(model, train, loss);
        t.adam.load_archive(&t.model.params, &a)?;
        let step = a
            .get(STEP_TENSOR)
            .ok_or_else(|| ModelError::MissingTensor(STEP_TENSOR.into()))?
            .data()[0];
        t.step = step as usize;
        Ok(t)
    }
}

/// Training log as CSV (`step,loss,lr,wall_ms`).
pub fn log_csv(records: &[StepRecord], with_wall: bool) -> String {
    let mut out = String::from(if with_wall { "step,loss,lr,wall_ms\n" } else { "step,loss,lr\n" });
    for r in records {
        out.push_str(&format!("{},{:e},{:e}", r.step, r.loss, r.lr));
        if with_wall {
            out.push_str(&format!(",{}", r.wall_ms));
        }
        out.push('\n');
    }
    out
}

/// Mean of the last `window` values before index `end`.
pub fn trailing_mean(values: &[f64], end: usize, window: usize) -> f64 {
    let end = end.min(values.len());
    let start = end.saturating_sub(window);
    let s = &values[start..end];
    s.iter().sum::<f64>() / s.len().max(1) as f64
}
