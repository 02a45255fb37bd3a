//! Dense tensors, reverse-mode differentiation, Adam, and the weights file format.

mod conv;
pub mod gradcheck;
mod graph;
pub mod io;
pub mod optim;
mod tensor;

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use conv::{ConvGeometry, Padding};
pub use graph::{relu, softmax, BatchNormMode, BatchStats, Gradients, Graph, Var, BN_EPS};
pub use optim::Adam;
pub use tensor::{Element, Tensor};

use crate::error::{Error, Result};

/// Named model tensors: trainable parameters plus non-trainable buffers
/// such as batch-norm running statistics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params<T> {
    pub trainable: BTreeMap<String, Tensor<T>>,
    pub buffers: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> Params<T> {
    pub fn new() -> Self {
        Self {
            trainable: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.trainable
            .get(name)
            .or_else(|| self.buffers.get(name))
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn buffer_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.buffers
            .get_mut(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    /// Number of trainable scalars.
    pub fn count(&self) -> usize {
        self.trainable.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Element>(&self) -> Params<U> {
        Params {
            trainable: self.trainable.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            buffers: self.buffers.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Every tensor under one flat namespace.
    pub fn all(&self) -> BTreeMap<String, Tensor<T>> {
        self.trainable
            .iter()
            .chain(&self.buffers)
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.trainable.values().chain(self.buffers.values()).all(Tensor::all_finite)
    }

    /// Uniform in `±sqrt(6 / fan_in)`.
    pub fn init_kernel(&mut self, name: &str, shape: &[usize], rng: &mut ChaCha8Rng) {
        let fan_in: usize = shape[1..].iter().product();
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound))).collect();
        self.trainable
            .insert(name.to_string(), Tensor::new(shape.to_vec(), data).expect("sized"));
    }

    pub fn init_const(&mut self, name: &str, shape: &[usize], v: f64) {
        self.trainable
            .insert(name.to_string(), Tensor::full(shape, T::from_f64_lossy(v)));
    }

    /// γ = 1, β = 0, running mean 0, running variance 1.
    pub fn init_batch_norm(&mut self, prefix: &str, channels: usize) {
        self.init_const(&format!("{prefix}.gamma"), &[channels], 1.0);
        self.init_const(&format!("{prefix}.beta"), &[channels], 0.0);
        self.buffers
            .insert(format!("{prefix}.running_mean"), Tensor::zeros(&[channels]));
        self.buffers
            .insert(format!("{prefix}.running_var"), Tensor::full(&[channels], T::one()));
    }

    /// Blends batch statistics into the running estimates.
    pub fn update_running(&mut self, prefix: &str, stats: &BatchStats<T>, momentum: f64) -> Result<()> {
        let m = T::from_f64_lossy(momentum);
        let keep = T::one() - m;
        for (suffix, src) in [("running_mean", &stats.mean), ("running_var", &stats.var)] {
            let buf = self.buffer_mut(&format!("{prefix}.{suffix}"))?;
            if buf.len() != src.len() {
                return Err(Error::ShapeMismatch {
                    op: "running stats",
                    expected: buf.shape().to_vec(),
                    got: vec![src.len()],
                });
            }
            for (r, &s) in buf.data_mut().iter_mut().zip(src) {
                *r = keep * *r + m * s;
            }
        }
        Ok(())
    }
}
