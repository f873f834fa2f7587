use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::models::params::{Init, ParamSet};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticSpec {
    pub channels: usize,
    pub image_size: usize,
    pub base_width: usize,
    pub max_width: usize,
    /// Number of stride-2 convolutions in the trunk.
    pub levels: usize,
    /// Dimension `n` of the vector head.
    pub vector_dim: usize,
    pub leaky_slope: f64,
}

impl CriticSpec {
    pub fn desk() -> Self {
        CriticSpec {
            channels: 1,
            image_size: 32,
            base_width: 8,
            max_width: 32,
            levels: 3,
            vector_dim: 64,
            leaky_slope: 0.2,
        }
    }

    fn width(&self, level: usize) -> usize {
        (self.base_width << (level - 1).min(16)).min(self.max_width)
    }

    fn final_side(&self) -> Result<usize> {
        let mut side = self.image_size;
        for _ in 0..self.levels {
            side = side.div_ceil(2);
        }
        if self.image_size == 0
            || self.channels == 0
            || self.vector_dim == 0
            || self.base_width == 0
            || self.levels == 0
        {
            return Err(Error::Config("critic sizes must be positive".into()));
        }
        Ok(side)
    }

    pub fn param_layout(&self) -> Result<Vec<(String, Vec<usize>, Init)>> {
        let side = self.final_side()?;
        let mut layout = Vec::new();
        let mut conv = |name: String, out: usize, inp: usize| {
            layout.push((format!("{name}.w"), vec![out, inp, 3, 3], Init::He { fan_in: inp * 9 }));
            layout.push((format!("{name}.b"), vec![out], Init::Zeros));
        };
        let mut ch = self.channels;
        for level in 1..=self.levels {
            conv(format!("critic.down{level}"), self.width(level), ch);
            ch = self.width(level);
        }
        let features = self.width(self.levels) * side * side;
        layout.push(("critic.head.w".into(), vec![self.vector_dim, features], Init::He { fan_in: features }));
        layout.push(("critic.head.b".into(), vec![self.vector_dim], Init::Zeros));
        Ok(layout)
    }
}

/// Output of the critic for a batch.
#[derive(Debug, Clone, Copy)]
pub struct CriticOut {
    /// `[B, n]` vector head `D(x)`.
    pub vector: Var,
    /// `[B]` scalar head, the sum of the vector components per sample.
    pub scalar: Var,
}

/// Convolutional critic with a vector head `D(x) ∈ R^n` and the scalar head
/// `D̂(x) = Σᵢ Dᵢ(x)` derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic<T> {
    pub spec: CriticSpec,
    pub params: ParamSet<T>,
}

impl<T: Real> Critic<T> {
    pub fn new(spec: CriticSpec, seed: u64) -> Result<Self> {
        let params = ParamSet::init(&spec.param_layout()?, seed);
        Ok(Critic { spec, params })
    }

    pub fn forward(&self, tape: &mut Tape<T>, bound: &[Var], x: Var) -> Result<CriticOut> {
        let s = &self.spec;
        let shape = tape.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != s.channels || shape[2] != s.image_size || shape[3] != s.image_size {
            return Err(Error::shape(
                "critic input",
                &shape,
                &[shape.first().copied().unwrap_or(0), s.channels, s.image_size, s.image_size],
            ));
        }
        let slope = T::from_f64(s.leaky_slope);
        let mut h = x;
        for level in 0..s.levels {
            let c = tape.conv2d(h, bound[2 * level], Some(bound[2 * level + 1]), 2, 1)?;
            h = tape.leaky_relu(c, slope);
        }
        let flat = tape.flatten(h)?;
        let head = 2 * s.levels;
        let vector = tape.dense(flat, bound[head], Some(bound[head + 1]))?;
        let scalar = tape.sum_per_sample(vector)?;
        Ok(CriticOut { vector, scalar })
    }

    /// `(vector head [B, n], scalar head [B])` without recording gradients.
    pub fn apply(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, &bound, xv)?;
        Ok((tape.value(out.vector).clone(), tape.value(out.scalar).clone()))
    }
}
