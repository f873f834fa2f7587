use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::params::ParamSet;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moment tensors mirror the parameter shapes.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Adam { config, step: 0, first: zeros(), second: zeros() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::shape("adam", &[params.len()], &[grads.len()]));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape("adam gradient", p.shape(), g.shape()));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let step_size = T::from_f64(c.lr / (1.0 - c.beta1.powi(t)));
        let v_corr = T::from_f64(1.0 / (1.0 - c.beta2.powi(t)));
        let (b1, b2, eps) = (T::from_f64(c.beta1), T::from_f64(c.beta2), T::from_f64(c.eps));
        let (one_b1, one_b2) = (T::ONE - b1, T::ONE - b2);

        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let (m, v, g) = (self.first[i].data_mut(), self.second[i].data_mut(), grads[i].data());
            for (((w, m), v), &g) in p.data_mut().iter_mut().zip(m).zip(v).zip(g) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *w -= step_size * *m / ((*v * v_corr).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(v: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.push("w", Tensor::from_f64(&[1], &[v]).unwrap());
        p
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = scalar_set(0.3);
        let mut opt = Adam::new(AdamConfig::default(), &p);
        for _ in 0..5 {
            opt.step(&mut p, &[Tensor::zeros(&[1])]).unwrap();
        }
        assert_eq!(p.get("w").unwrap().data(), &[0.3]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_set(1.0);
        let cfg = AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut opt = Adam::new(cfg, &p);
        opt.step(&mut p, &[Tensor::from_f64(&[1], &[1.0]).unwrap()]).unwrap();
        // m̂ = 1, v̂ = 1: w = 1 - 0.1 * 1 / (1 + 1e-8)
        let w = p.get("w").unwrap().data()[0];
        assert!((w - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-12, "{w}");
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = scalar_set(1.0);
        let mut opt = Adam::new(AdamConfig::default(), &p);
        let err = opt.step(&mut p, &[Tensor::from_f64(&[1], &[f64::NAN]).unwrap()]).unwrap_err();
        assert!(err.to_string().contains("gradient of w"));
        assert_eq!(p.get("w").unwrap().data(), &[1.0]);
    }

    #[test]
    fn identical_runs_identical_trajectories() {
        let run = || {
            let mut p = scalar_set(0.5);
            let mut opt = Adam::new(AdamConfig::default(), &p);
            let mut traj = Vec::new();
            for k in 0..20 {
                let g = (k as f64 * 0.7).sin();
                opt.step(&mut p, &[Tensor::from_f64(&[1], &[g]).unwrap()]).unwrap();
                traj.push(p.get("w").unwrap().data()[0].to_bits());
            }
            traj
        };
        assert_eq!(run(), run());
    }
}
