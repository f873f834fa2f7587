use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Grads, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// How a parameter tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Gaussian with variance `2 / fan_in`.
    He {
        fan_in: usize,
    },
    Zeros,
}

/// Ordered, named parameter tensors of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), tensors: Vec::new() }
    }

    /// Builds parameters from `(name, shape, init)` layouts. Each tensor draws
    /// from its own stream derived from `seed` and its position, so the
    /// result depends only on the seed and the layout.
    pub fn init(layout: &[(String, Vec<usize>, Init)], seed: u64) -> Self {
        let mut set = ParamSet::new();
        for (i, (name, shape, init)) in layout.iter().enumerate() {
            let t = match init {
                Init::Zeros => Tensor::zeros(shape),
                Init::He { fan_in } => {
                    let std = (2.0 / *fan_in as f64).sqrt();
                    let mut rng = ChaCha8Rng::seed_from_u64(crate::seeds::derive(seed, i as u64));
                    let n: usize = shape.iter().product();
                    let data = (0..n)
                        .map(|_| {
                            let g: f64 = StandardNormal.sample(&mut rng);
                            T::from_f64(g * std)
                        })
                        .collect();
                    Tensor::new(shape, data).expect("layout shape")
                }
            };
            set.push(name.clone(), t);
        }
        set
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.names.push(name.into());
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Places every tensor on `tape`; trainable tensors receive gradients.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.tensors.iter().map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) }).collect()
    }

    /// Collects gradients for bound vars; unreachable parameters get zeros.
    pub fn collect_grads(&self, grads: &mut Grads<T>, bound: &[Var]) -> Vec<Tensor<T>> {
        self.tensors
            .iter()
            .zip(bound)
            .map(|(t, &v)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }

    /// Clamps every element into `[-bound, bound]`.
    pub fn clamp(&mut self, bound: T) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                if *v > bound {
                    *v = bound;
                } else if *v < -bound {
                    *v = -bound;
                }
            }
        }
    }

    pub fn max_abs(&self) -> T {
        self.tensors.iter().map(Tensor::max_abs).fold(T::ZERO, |m, v| if v > m { v } else { m })
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    /// Replaces tensor values from `(name, tensor)` pairs that must match
    /// this set's names and shapes exactly.
    pub fn load_from(&mut self, entries: &[(String, Tensor<T>)]) -> Result<()> {
        for (name, t) in entries {
            let i = self
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
            if self.tensors[i].shape() != t.shape() {
                return Err(Error::shape("load parameter", self.tensors[i].shape(), t.shape()));
            }
            self.tensors[i] = t.clone();
        }
        Ok(())
    }
}

/// Clamps a model's parameters into `[-bound, bound]` (critic weight clipping).
pub fn clip_weights<T: Real>(params: &mut ParamSet<T>, bound: T) {
    params.clamp(bound);
}
