//! Adam with bias correction.

use edeblur_core::formats::archive::TensorArchive;
use edeblur_tensor::{Gradients, Tensor};

use crate::error::{ModelError, Result};
use crate::params::{Bound, Params};

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed updates.
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &Params, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || {
            params
                .entries()
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
                .collect::<Vec<_>>()
        };
        Adam {
            beta1,
            beta2,
            eps,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update using the gradients of `bound`'s variables.
    /// Parameters without a gradient (unused in the graph) see a zero gradient.
    pub fn step(&mut self, params: &mut Params, bound: &Bound, grads: &Gradients, lr: f64) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (name, p)) in params.entries_mut().iter_mut().enumerate() {
            let var = bound.get(name)?;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            if m.shape() != p.shape() {
                return Err(ModelError::Shape {
                    name: format!("adam/{name}"),
                    expected: p.shape().to_vec(),
                    actual: m.shape().to_vec(),
                });
            }
            let Some(g) = grads.get(var) else {
                m.data_mut().iter_mut().for_each(|x| *x *= self.beta1);
                v.data_mut().iter_mut().for_each(|x| *x *= self.beta2);
                continue;
            };
            let (md, vd, pd) = (m.data_mut(), v.data_mut(), p.data_mut());
            for (j, &gj) in g.data().iter().enumerate() {
                md[j] = self.beta1 * md[j] + (1.0 - self.beta1) * gj;
                vd[j] = self.beta2 * vd[j] + (1.0 - self.beta2) * gj * gj;
                let update = (md[j] / bc1) / ((vd[j] / bc2).sqrt() + self.eps);
                pd[j] -= lr * update;
            }
        }
        Ok(())
    }

    pub fn to_archive(&self, params: &Params, archive: &mut TensorArchive) {
        for (i, (name, _)) in params.entries().iter().enumerate() {
            archive.insert(format!("adam.m/{name}"), self.m[i].clone());
            archive.insert(format!("adam.v/{name}"), self.v[i].clone());
        }
        archive.insert("adam/t", Tensor::scalar(self.t as f64));
    }

    pub fn load_archive(&mut self, params: &Params, archive: &TensorArchive) -> Result<()> {
        let fetch = |key: String, like: &Tensor| -> Result<Tensor> {
            let t = archive.get(&key).ok_or_else(|| ModelError::MissingTensor(key.clone()))?;
            if t.shape() != like.shape() {
                return Err(ModelError::Shape {
                    name: key,
                    expected: like.shape().to_vec(),
                    actual: t.shape().to_vec(),
                });
            }
            Ok(t.clone())
        };
        for (i, (name, p)) in params.entries().iter().enumerate() {
            self.m[i] = fetch(format!("adam.m/{name}"), p)?;
            self.v[i] = fetch(format!("adam.v/{name}"), p)?;
        }
        let t = fetch("adam/t".into(), &Tensor::scalar(0.0))?.data()[0];
        if t < 0.0 || t.fract() != 0.0 {
            return Err(ModelError::Config(format!("adam/t must be a count, got {t}")));
        }
        self.t = t as u64;
        Ok(())
    }
}
