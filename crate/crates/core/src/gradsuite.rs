//! The full finite-difference gradient suite: every differentiable tape
//! primitive, every objective, and an end-to-end generator + critic + loss
//! graph on 4×4 images, each at many random points (64-bit).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{gradient_check_many, GradCheckOptions, Tape, Var};
use crate::error::Result;
use crate::models::{Bottleneck, Critic, CriticSpec, Downsample, Generator, GeneratorSpec};
use crate::objectives::graph;
use crate::seeds::derive;
use crate::tensor::Tensor;

/// Largest relative error an op may show and still pass.
pub const TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    /// Random points per op.
    pub seeds: u64,
    /// Master seed the per-op, per-point seeds derive from.
    pub seed: u64,
    /// Test fixture: replace the convolution with one whose backward pass
    /// drops the input gradient, to exercise the failure path.
    pub broken_conv: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { seeds: 50, seed: 0, broken_conv: false }
    }
}

/// Worst result for one op over all points.
#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub op: &'static str,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE && self.checked > 0
    }
}

type Graph = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches length")
}

/// Reduces a tensor output to a scalar through fixed random weights, so
/// every output coordinate contributes a distinct gradient.
fn weighted(tape: &mut Tape<f64>, y: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn conv(tape: &mut Tape<f64>, x: Var, k: Var, b: Var, stride: usize, pad: usize, broken: bool) -> Result<Var> {
    if broken {
        let detached = tape.constant(tape.value(x).clone());
        return tape.conv2d(detached, k, Some(b), stride, pad);
    }
    tape.conv2d(x, k, Some(b), stride, pad)
}

/// Builds the graph and its input points for `op` at one random point.
fn case(op: &'static str, rng: &mut ChaCha8Rng, point: u64, broken_conv: bool) -> Result<(Graph, Vec<Tensor<f64>>)> {
    let m = [3, 4];
    let wm = uniform(rng, &m, -1.0, 1.0);
    let unary = |f: fn(&mut Tape<f64>, Var) -> Var| -> Graph {
        let w = wm.clone();
        Box::new(move |t, v| {
            let y = f(t, v[0]);
            weighted(t, y, &w)
        })
    };
    let binary = |f: fn(&mut Tape<f64>, Var, Var) -> Result<Var>| -> Graph {
        let w = wm.clone();
        Box::new(move |t, v| {
            let y = f(t, v[0], v[1])?;
            weighted(t, y, &w)
        })
    };
    let a = uniform(rng, &m, -1.0, 1.0);
    let b = uniform(rng, &m, -1.0, 1.0);
    Ok(match op {
        "add" => (binary(|t, x, y| t.add(x, y)), vec![a, b]),
        "sub" => (binary(|t, x, y| t.sub(x, y)), vec![a, b]),
        "mul" => (binary(|t, x, y| t.mul(x, y)), vec![a, b]),
        "scale" => (unary(|t, x| t.scale(x, 0.7)), vec![a]),
        "neg" => (unary(|t, x| t.neg(x)), vec![a]),
        "add_scalar" => (unary(|t, x| t.add_scalar(x, -0.3)), vec![a]),
        "relu" => (unary(|t, x| t.relu(x)), vec![a]),
        "leaky_relu" => (unary(|t, x| t.leaky_relu(x, 0.2)), vec![a]),
        "tanh" => (unary(|t, x| t.tanh(x)), vec![a]),
        "abs" => (unary(|t, x| t.abs(x)), vec![a]),
        "sum" => (Box::new(|t: &mut Tape<f64>, v: &[Var]| Ok(t.sum(v[0]))), vec![a]),
        "mean" => (Box::new(|t: &mut Tape<f64>, v: &[Var]| Ok(t.mean(v[0]))), vec![a]),
        "sum_order_invariant" => (Box::new(|t: &mut Tape<f64>, v: &[Var]| Ok(t.sum_order_invariant(v[0]))), vec![a]),
        "l1_norm" => (Box::new(|t: &mut Tape<f64>, v: &[Var]| Ok(t.l1_norm(v[0]))), vec![a]),
        "sum_per_sample" => {
            let w = uniform(rng, &[3], -1.0, 1.0);
            (
                Box::new(move |t: &mut Tape<f64>, v: &[Var]| {
                    let y = t.sum_per_sample(v[0])?;
                    weighted(t, y, &w)
                }),
                vec![a],
            )
        }
        "reshape" => {
            let w = uniform(rng, &[2, 6], -1.0, 1.0);
            (
                Box::new(move |t: &mut Tape<f64>, v: &[Var]| {
                    let y = t.reshape(v[0], &[2, 6])?;
                    weighted(t, y, &w)
                }),
                vec![a],
            )
        }
        "flatten" => {
            let x = uniform(rng, &[2, 3, 2, 2], -1.0, 1.0);
            let w = uniform(rng, &[2, 12], -1.0, 1.0);
            (
                Box::new(move |t: &mut Tape<f64>, v: &[Var]| {
                    let y = t.flatten(v[0])?;
                    weighted(t, y, &w)
                }),
                vec![x],
            )
        }
        "dense" => {
            let x = uniform(rng, &[3, 5], -1.0, 1.0);
            let k = uniform(rng, &[4, 5], -1.0, 1.0);
            let bias = uniform(rng, &[4], -1.0, 1.0);
            let w = uniform(rng, &[3, 4], -1.0, 1.0);
            (
                Box::new(move |t: &mut Tape<f64>, v: &[Var]| {
                    let y = t.dense(v[0], v[1], Some(v[2]))?;
                    weighted(t, y, &w)
                }),
                vec![x, k, bias],
            )
        }
        "conv2d" => {
            // Cycle through strides, paddings and kernel sizes.
            let stride = 1 + (point % 2) as usize;
            let pad = ((point / 2) % 2) as usize;
            let ks = 2 + ((point / 4) % 2) as usize;
            let (side, cin, cout) = (5, 2, 3);
            let x = uniform(rng, &[2, cin, side, side], -1.0, 1.0);
            let k = uniform(rng, &[cout, cin, ks, ks], -1.0, 1.0);
            let bias = uniform(rng, &[cout], -1.0, 1.0);
            let out = (side + 2 * pad - ks) / stride + 1;
            let w = uniform(rng, &[2, cout, out, out], -1.0, 1.0);
            (
                Box::new(move |t: &mut Tape<f64>, v: &[Var]| {
                    let y = conv(t, v[0], v[1], v[2], stride, pad, broken_conv)?;
                    weighted(t, y, &w)
                }),
                vec![x, k, bias],
            )
        }
        "upsample2x" => {
            let x = uniform(rng, &[2, 2, 3, 3], -1.0, 1.0);
            let w = uniform(rng, &[2, 2, 6, 6], -1.0, 1.0);
            (
                Box::new(move |t: &mut Tape<f64>, v: &[Var]| {
                    let y = t.upsample2x(v[0])?;
                    weighted(t, y, &w)
                }),
                vec![x],
            )
        }
        "avgpool2x" => {
            let x = uniform(rng, &[2, 2, 4, 4], -1.0, 1.0);
            let w = uniform(rng, &[2, 2, 2, 2], -1.0, 1.0);
            (
                Box::new(move |t: &mut Tape<f64>, v: &[Var]| {
                    let y = t.avgpool2x(v[0])?;
                    weighted(t, y, &w)
                }),
                vec![x],
            )
        }
        "concat_channels" => {
            let x = uniform(rng, &[2, 2, 3, 3], -1.0, 1.0);
            let z = uniform(rng, &[2, 1, 3, 3], -1.0, 1.0);
            let w = uniform(rng, &[2, 3, 3, 3], -1.0, 1.0);
            (
                Box::new(move |t: &mut Tape<f64>, v: &[Var]| {
                    let y = t.concat_channels(v[0], v[1])?;
                    weighted(t, y, &w)
                }),
                vec![x, z],
            )
        }
        "ae_loss" => {
            let x = uniform(rng, &[2, 1, 3, 3], -1.0, 1.0);
            let gx = uniform(rng, &[2, 1, 3, 3], -1.0, 1.0);
            (Box::new(|t: &mut Tape<f64>, v: &[Var]| graph::ae_loss(t, v[0], v[1])), vec![x, gx])
        }
        "paired_adv_loss" => {
            (Box::new(|t: &mut Tape<f64>, v: &[Var]| graph::paired_adv_loss(t, v[0], v[1])), vec![a, b])
        }
        "separable_adv_loss" => {
            let fake = uniform(rng, &[5, 4], -1.0, 1.0);
            (Box::new(|t: &mut Tape<f64>, v: &[Var]| graph::separable_adv_loss(t, v[0], v[1])), vec![a, fake])
        }
        "wgan_loss" => {
            let real = uniform(rng, &[3], -1.0, 1.0);
            let fake = uniform(rng, &[5], -1.0, 1.0);
            (Box::new(|t: &mut Tape<f64>, v: &[Var]| graph::wgan_loss(t, v[0], v[1])), vec![real, fake])
        }
        "wgan_generator_loss" => {
            let fake = uniform(rng, &[5], -1.0, 1.0);
            (Box::new(|t: &mut Tape<f64>, v: &[Var]| graph::wgan_generator_loss(t, v[0])), vec![fake])
        }
        "end_to_end" => end_to_end(rng, point)?,
        other => unreachable!("no gradient case for {other}"),
    })
}

/// Generator, critic (both heads) and every loss on a batch of 4×4 images;
/// checked with respect to the images and all parameters.
fn end_to_end(rng: &mut ChaCha8Rng, point: u64) -> Result<(Graph, Vec<Tensor<f64>>)> {
    let gspec = GeneratorSpec {
        channels: 1,
        image_size: 4,
        bottleneck: Bottleneck::new(3, 1, 1),
        noise_dim: 2,
        base_width: 3,
        max_width: 4,
        downsample: if point.is_multiple_of(2) { Downsample::StrideConv } else { Downsample::AvgPool },
    };
    let cspec = CriticSpec {
        channels: 1,
        image_size: 4,
        base_width: 3,
        max_width: 4,
        levels: 2,
        vector_dim: 3,
        leaky_slope: 0.2,
    };
    let seed = rng.random::<u64>();
    let gen = Generator::<f64>::new(gspec, derive(seed, 0))?;
    let critic = Critic::<f64>::new(cspec, derive(seed, 1))?;
    let batch = 2;
    let x = uniform(rng, &[batch, 1, 4, 4], -1.0, 1.0);
    let z = uniform(rng, &gen.noise_shape(batch), -1.0, 1.0);
    let (ng, nc) = (gen.params.len(), critic.params.len());

    let mut points = vec![x];
    points.extend(gen.params.tensors().iter().cloned());
    points.extend(critic.params.tensors().iter().cloned());
    let f = move |t: &mut Tape<f64>, v: &[Var]| -> Result<Var> {
        let (x, gp, cp) = (v[0], &v[1..1 + ng], &v[1 + ng..1 + ng + nc]);
        let zv = t.constant(z.clone());
        let gx = gen.forward(t, gp, x, zv)?;
        let real = critic.forward(t, cp, x)?;
        let fake = critic.forward(t, cp, gx)?;
        let paired = graph::paired_adv_loss(t, real.vector, fake.vector)?;
        let separable = graph::separable_adv_loss(t, real.vector, fake.vector)?;
        let wgan = graph::wgan_loss(t, real.scalar, fake.scalar)?;
        let gen_loss = graph::wgan_generator_loss(t, fake.scalar)?;
        let recon = graph::ae_loss(t, x, gx)?;
        let mut total = t.add(paired, separable)?;
        for term in [wgan, gen_loss, recon] {
            total = t.add(total, term)?;
        }
        Ok(total)
    };
    Ok((Box::new(f), points))
}

/// Every op the suite covers, in report order.
pub const OPS: &[&str] = &[
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "add_scalar",
    "sum",
    "mean",
    "sum_order_invariant",
    "sum_per_sample",
    "dense",
    "conv2d",
    "relu",
    "leaky_relu",
    "tanh",
    "abs",
    "l1_norm",
    "upsample2x",
    "avgpool2x",
    "concat_channels",
    "reshape",
    "flatten",
    "ae_loss",
    "paired_adv_loss",
    "separable_adv_loss",
    "wgan_loss",
    "wgan_generator_loss",
    "end_to_end",
];

/// Runs every op in [`OPS`] at `opts.seeds` random points.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<OpCheck>> {
    OPS.iter()
        .enumerate()
        .map(|(i, &op)| {
            let mut worst = OpCheck { op, max_rel_error: 0.0, checked: 0, skipped_kinks: 0 };
            for point in 0..opts.seeds {
                let seed = derive(derive(opts.seed, i as u64), point);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (f, points) = case(op, &mut rng, point, opts.broken_conv)?;
                let check = GradCheckOptions { seed, ..GradCheckOptions::default() };
                let r = gradient_check_many(f, &points, &check)?;
                worst.max_rel_error = worst.max_rel_error.max(r.max_rel_error);
                worst.checked += r.checked;
                worst.skipped_kinks += r.skipped_kinks;
            }
            Ok(worst)
        })
        .collect()
}
