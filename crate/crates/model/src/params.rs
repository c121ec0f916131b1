//! Named parameter tensors, their initialization and checkpoint I/O.

use std::collections::HashMap;

use edeblur_core::formats::archive::TensorArchive;
use edeblur_tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform on `[-b, b]` with `b = gain * sqrt(6 / fan_in)`.
    FanIn { fan_in: usize, gain: f64 },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Ordered parameter declarations.
#[derive(Debug, Default, Clone)]
pub struct SpecList(pub Vec<ParamSpec>);

impl SpecList {
    pub fn push(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.0.push(ParamSpec { name, shape, init });
    }

    /// `name.w` as `[co, ci, k, k]` and a zero `name.b`.
    pub fn conv(&mut self, name: &str, ci: usize, co: usize, k: usize) {
        self.conv_gain(name, ci, co, k, 1.0);
    }

    pub fn conv_gain(&mut self, name: &str, ci: usize, co: usize, k: usize, gain: f64) {
        self.push(
            format!("{name}.w"),
            vec![co, ci, k, k],
            Init::FanIn {
                fan_in: ci * k * k,
                gain,
            },
        );
        self.push(format!("{name}.b"), vec![co], Init::Zeros);
    }

    /// Per-channel `name.gamma` (ones) and `name.beta` (zeros).
    pub fn affine(&mut self, name: &str, c: usize) {
        self.push(format!("{name}.gamma"), vec![c], Init::Ones);
        self.push(format!("{name}.beta"), vec![c], Init::Zeros);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    entries: Vec<(String, Tensor)>,
}

impl Params {
    pub fn init(specs: &SpecList, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = specs
            .0
            .iter()
            .map(|s| {
                let n: usize = s.shape.iter().product();
                let data = match s.init {
                    Init::FanIn { fan_in, gain } => {
                        let b = gain * (6.0 / fan_in as f64).sqrt();
                        (0..n).map(|_| rng.gen_range(-b..b)).collect()
                    }
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                };
                let t = Tensor::new(s.shape.clone(), data).expect("spec shape matches data");
                (s.name.clone(), t)
            })
            .collect();
        Params { entries }
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Overwrites `name`, keeping its declared shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .get_mut(name)
            .ok_or_else(|| ModelError::MissingTensor(name.to_string()))?;
        if slot.shape() != value.shape() {
            return Err(ModelError::Shape {
                name: name.to_string(),
                expected: slot.shape().to_vec(),
                actual: value.shape().to_vec(),
            });
        }
        *slot = value;
        Ok(())
    }

    /// Records every parameter as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        self.bind_with(g, |_| true)
    }

    /// Like [`Params::bind`], but parameters failing `trainable` become constants.
    pub fn bind_with(&self, g: &mut Graph, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(n, t)| {
                let v = if trainable(n) {
                    g.leaf(t.clone())
                } else {
                    g.constant(t.clone())
                };
                (n.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    pub fn to_archive(&self, prefix: &str, archive: &mut TensorArchive) {
        for (n, t) in &self.entries {
            archive.insert(format!("{prefix}{n}"), t.clone());
        }
    }

    /// Replaces every parameter with the archive entry `prefix + name`.
    pub fn load_archive(&mut self, prefix: &str, archive: &TensorArchive) -> Result<()> {
        for (n, t) in &mut self.entries {
            let key = format!("{prefix}{n}");
            let src = archive.get(&key).ok_or(ModelError::MissingTensor(key.clone()))?;
            if src.shape() != t.shape() {
                return Err(ModelError::Shape {
                    name: key,
                    expected: t.shape().to_vec(),
                    actual: src.shape().to_vec(),
                });
            }
            *t = src.clone();
        }
        Ok(())
    }
}

/// Parameters recorded on a particular graph.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::MissingTensor(name.to_string()))
    }

    /// Points `name` at another variable, e.g. a probe leaf in a gradient check.
    pub fn insert(&mut self, name: &str, v: Var) {
        self.vars.insert(name.to_string(), v);
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }

    pub fn contains(&self, v: Var) -> bool {
        self.vars.values().any(|&x| x == v)
    }
}
