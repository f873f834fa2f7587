//! Two-dimensional picture of the adversarial dynamics.
//!
//! Data points come from a Gaussian mixture in the plane. The generator is
//! a residual map `G(x) = x + f(x)` whose dense network `f` starts as a
//! constant displacement, so at iteration 0 every `G(x)` sits the same
//! distance away from its `x`. A dense critic `D̂: R² → R` and the
//! generator then alternate under the scalar-head adversarial objective
//! with weight clipping; the trace records how the mean paired distance
//! `‖G(x) − x‖` shrinks and samples the critic's field on a grid.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::models::{clip_weights, Adam, AdamConfig, Init, ParamSet};
use crate::objectives::graph;
use crate::seeds::derive;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GeoConfig {
    /// Number of data points.
    pub n: usize,
    /// Critic/generator alternations.
    pub iterations: usize,
    pub seed: u64,
    /// Iterations between snapshots (iteration 0 and the last are always
    /// included).
    pub snapshot_every: usize,
    pub hidden: usize,
    pub lr: f64,
    pub clip: f64,
    /// Length of the initial displacement of `G`.
    pub displacement: f64,
    /// Mixture components, evenly spaced on a circle.
    pub components: usize,
    pub radius: f64,
    pub spread: f64,
    /// Side of the square field grid.
    pub field_size: usize,
    /// Field covers `[-extent, extent]²`.
    pub extent: f64,
}

impl Default for GeoConfig {
    fn default() -> Self {
        GeoConfig {
            n: 256,
            iterations: 2000,
            seed: 0,
            snapshot_every: 250,
            hidden: 32,
            lr: 1e-3,
            clip: 0.1,
            displacement: 3.0,
            components: 4,
            radius: 1.5,
            spread: 0.25,
            field_size: 64,
            extent: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeoSnapshot {
    pub iteration: usize,
    pub mean_distance: f64,
    pub critic_loss: f64,
    pub gen_loss: f64,
    /// `[field_size, field_size]` samples of `D̂`; row 0 is the top
    /// (largest second coordinate).
    pub field: Tensor<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeoTrace {
    pub points: Tensor<f64>,
    /// Mean paired distance after every iteration, index 0 = initial.
    pub distances: Vec<f64>,
    pub snapshots: Vec<GeoSnapshot>,
}

pub const GEO_TRACE_HEADER: &str = "iteration,mean_distance,critic_loss,gen_loss";

impl GeoTrace {
    pub fn initial_distance(&self) -> f64 {
        self.distances[0]
    }

    pub fn final_distance(&self) -> f64 {
        *self.distances.last().expect("initial distance present")
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{GEO_TRACE_HEADER}\n");
        for s in &self.snapshots {
            out.push_str(&format!("{},{},{},{}\n", s.iteration, s.mean_distance, s.critic_loss, s.gen_loss));
        }
        out
    }
}

fn mlp_layout(prefix: &str, widths: &[usize], zero_last: bool) -> Vec<(String, Vec<usize>, Init)> {
    let mut layout = Vec::new();
    for (i, w) in widths.windows(2).enumerate() {
        let last = i + 2 == widths.len();
        let init = if last && zero_last { Init::Zeros } else { Init::He { fan_in: w[0] } };
        layout.push((format!("{prefix}{i}.w"), vec![w[1], w[0]], init));
        layout.push((format!("{prefix}{i}.b"), vec![w[1]], Init::Zeros));
    }
    layout
}

fn mlp(tape: &mut Tape<f64>, p: &[Var], x: Var, slope: f64) -> Result<Var> {
    let layers = p.len() / 2;
    let mut h = x;
    for l in 0..layers {
        h = tape.dense(h, p[2 * l], Some(p[2 * l + 1]))?;
        if l + 1 < layers {
            h = tape.leaky_relu(h, slope);
        }
    }
    Ok(h)
}

fn generate(tape: &mut Tape<f64>, p: &[Var], x: Var) -> Result<Var> {
    let f = mlp(tape, p, x, 0.0)?;
    tape.add(x, f)
}

fn mean_distance(points: &Tensor<f64>, moved: &Tensor<f64>) -> f64 {
    let n = points.shape()[0];
    let total: f64 = points
        .data()
        .chunks(2)
        .zip(moved.data().chunks(2))
        .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
        .sum();
    total / n as f64
}

/// Alternating critic/generator training on planar data.
pub fn geometry_demo(cfg: &GeoConfig) -> Result<GeoTrace> {
    if cfg.n < 8 {
        return Err(Error::Config(format!("geometry demo needs at least 8 points, got {}", cfg.n)));
    }
    if cfg.components == 0 || cfg.hidden == 0 || cfg.field_size == 0 || cfg.snapshot_every == 0 {
        return Err(Error::Config("components, hidden, field_size and snapshot_every must be positive".into()));
    }
    if !(cfg.clip > 0.0 && cfg.lr > 0.0 && cfg.extent > 0.0) {
        return Err(Error::Config("clip, lr and extent must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, 0));
    let mut pts = Vec::with_capacity(2 * cfg.n);
    for _ in 0..cfg.n {
        let k = rng.random_range(0..cfg.components);
        let angle = 2.0 * PI * k as f64 / cfg.components as f64;
        let (gx, gy): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
        pts.push(cfg.radius * angle.cos() + cfg.spread * gx);
        pts.push(cfg.radius * angle.sin() + cfg.spread * gy);
    }
    let points = Tensor::new(&[cfg.n, 2], pts)?;

    let h = cfg.hidden;
    let mut gen = ParamSet::<f64>::init(&mlp_layout("g", &[2, h, 2], true), derive(cfg.seed, 1));
    let theta: f64 = 2.0 * PI * rng.random::<f64>();
    let last_bias = gen.len() - 1;
    gen.tensors_mut()[last_bias] =
        Tensor::new(&[2], vec![cfg.displacement * theta.cos(), cfg.displacement * theta.sin()])?;
    let mut critic = ParamSet::<f64>::init(&mlp_layout("d", &[2, h, h, 1], false), derive(cfg.seed, 2));
    clip_weights(&mut critic, cfg.clip);
    let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let mut gen_opt = Adam::new(adam, &gen);
    let mut critic_opt = Adam::new(adam, &critic);
    let slope = 0.2;

    let moved = |gen: &ParamSet<f64>| -> Result<Tensor<f64>> {
        let mut t = Tape::new();
        let p = gen.bind(&mut t, false);
        let x = t.constant(points.clone());
        let g = generate(&mut t, &p, x)?;
        Ok(t.value(g).clone())
    };
    let field = |critic: &ParamSet<f64>| -> Result<Tensor<f64>> {
        let s = cfg.field_size;
        let coord = |i: usize| if s == 1 { 0.0 } else { -cfg.extent + 2.0 * cfg.extent * i as f64 / (s - 1) as f64 };
        let mut grid = Vec::with_capacity(2 * s * s);
        for r in 0..s {
            for c in 0..s {
                grid.push(coord(c));
                grid.push(coord(s - 1 - r));
            }
        }
        let mut t = Tape::new();
        let p = critic.bind(&mut t, false);
        let x = t.constant(Tensor::new(&[s * s, 2], grid)?);
        let d = mlp(&mut t, &p, x, slope)?;
        Tensor::new(&[s, s], t.value(d).data().to_vec())
    };

    let mut distances = vec![mean_distance(&points, &moved(&gen)?)];
    let mut snapshots = vec![GeoSnapshot {
        iteration: 0,
        mean_distance: distances[0],
        critic_loss: 0.0,
        gen_loss: 0.0,
        field: field(&critic)?,
    }];

    for it in 1..=cfg.iterations {
        // Critic: ascend mean D̂(x) − mean D̂(G(x)).
        let fake = moved(&gen)?;
        let mut t = Tape::new();
        let cp = critic.bind(&mut t, true);
        let (xr, xf) = (t.constant(points.clone()), t.constant(fake));
        let dr = mlp(&mut t, &cp, xr, slope)?;
        let df = mlp(&mut t, &cp, xf, slope)?;
        let (sr, sf) = (t.reshape(dr, &[cfg.n])?, t.reshape(df, &[cfg.n])?);
        let objective = graph::wgan_loss(&mut t, sr, sf)?;
        let loss = t.neg(objective);
        let critic_loss = t.value(loss).item();
        let mut grads = t.backward(loss)?;
        let g = critic.collect_grads(&mut grads, &cp);
        critic_opt.step(&mut critic, &g)?;
        clip_weights(&mut critic, cfg.clip);

        // Generator: descend −mean D̂(G(x)).
        let mut t = Tape::new();
        let gp = gen.bind(&mut t, true);
        let cp = critic.bind(&mut t, false);
        let x = t.constant(points.clone());
        let gx = generate(&mut t, &gp, x)?;
        let d = mlp(&mut t, &cp, gx, slope)?;
        let s = t.reshape(d, &[cfg.n])?;
        let loss = graph::wgan_generator_loss(&mut t, s)?;
        let gen_loss = t.value(loss).item();
        let mut grads = t.backward(loss)?;
        let g = gen.collect_grads(&mut grads, &gp);
        gen_opt.step(&mut gen, &g)?;

        if !(critic_loss.is_finite() && gen_loss.is_finite()) {
            return Err(Error::NonFinite(format!("geometry demo diverged at iteration {it}")));
        }
        let dist = mean_distance(&points, &moved(&gen)?);
        distances.push(dist);
        if it % cfg.snapshot_every == 0 || it == cfg.iterations {
            snapshots.push(GeoSnapshot {
                iteration: it,
                mean_distance: dist,
                critic_loss,
                gen_loss,
                field: field(&critic)?,
            });
        }
    }
    Ok(GeoTrace { points, distances, snapshots })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeoConfig {
        GeoConfig { n: 16, iterations: 5, snapshot_every: 2, field_size: 4, ..GeoConfig::default() }
    }

    #[test]
    fn baseline_is_initial_displacement() {
        let trace = geometry_demo(&small()).unwrap();
        assert!((trace.initial_distance() - 3.0).abs() < 1e-12);
        assert_eq!(trace.snapshots.iter().map(|s| s.iteration).collect::<Vec<_>>(), vec![0, 2, 4, 5]);
        assert_eq!(trace.distances.len(), 6);
    }

    #[test]
    fn same_seed_same_trace() {
        assert_eq!(geometry_demo(&small()).unwrap(), geometry_demo(&small()).unwrap());
    }

    #[test]
    fn too_few_points_rejected() {
        assert!(geometry_demo(&GeoConfig { n: 4, ..small() }).is_err());
    }
}
