//! Reconstruction and adversarial objectives.
//!
//! Three adversarial forms are provided, all over the critic `D` with
//! vector head `D(x) ∈ Rⁿ` and scalar head `D̂(x) = Σᵢ Dᵢ(x)`:
//!
//! ```text
//! paired      (1/m) Σₖ ‖D(xₖ) − D(G(xₖ))‖₁
//! separable   (1/m) [Σₖ Σᵢ Dᵢ(xₖ) − Σₖ Σᵢ Dᵢ(G(xₖ))]
//! wgan        mean D̂(real) − mean D̂(fake)
//! ```
//!
//! When `Dᵢ(xₖ) ≥ Dᵢ(G(xₖ))` for every feature and sample, the absolute
//! values in the paired form can be dropped and the sums regrouped, so all
//! three agree; [`identity_chain_check`] verifies that numerically. The
//! separable and wgan forms never look at which fake belongs to which real
//! image, and their reductions sort before summing so that permuting the
//! fake batch does not change a single bit of the result.
//!
//! The [`graph`] functions build the same losses on a [`Tape`] for training.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::models::{Critic, Generator};
use crate::tensor::{order_invariant_sum, Real, Tensor};

/// A batch of images `[B, C, H, W]` in `[-1, 1]`, optionally with the
/// generator outputs paired to them.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub images: Tensor<T>,
    pub generated: Option<Tensor<T>>,
}

impl<T: Real> Batch<T> {
    pub fn new(images: Tensor<T>) -> Result<Self> {
        if images.shape().len() != 4 || images.shape()[0] == 0 {
            return Err(Error::shape("batch", images.shape(), &[1, 0, 0, 0]));
        }
        let limit = T::ONE;
        if let Some(v) = images.data().iter().find(|&&v| !(v >= -limit && v <= limit)) {
            return Err(Error::Config(format!("batch value {v} outside [-1, 1]")));
        }
        Ok(Batch { images, generated: None })
    }

    pub fn with_generated(mut self, generated: Tensor<T>) -> Result<Self> {
        if generated.shape() != self.images.shape() {
            return Err(Error::shape("paired batch", generated.shape(), self.images.shape()));
        }
        self.generated = Some(generated);
        Ok(self)
    }

    /// `m`, the number of images.
    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Losses of one training step. `recon_l1` is a diagnostic and never feeds
/// a gradient in adversarial modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBundle {
    pub generator_loss: f64,
    pub critic_loss: f64,
    pub recon_l1: f64,
}

impl LossBundle {
    pub fn new(generator_loss: f64, critic_loss: f64, recon_l1: f64) -> Result<Self> {
        for (name, v) in
            [("generator loss", generator_loss), ("critic loss", critic_loss), ("reconstruction", recon_l1)]
        {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{name} is {v}")));
            }
        }
        Ok(LossBundle { generator_loss, critic_loss, recon_l1 })
    }
}

/// Loss builders on a tape. Inputs are already-computed tape values:
/// images `[B, ...]`, vector heads `[B, n]`, scalar heads `[B]`.
pub mod graph {
    use super::*;

    fn batch_of<T: Real>(tape: &Tape<T>, v: Var) -> Result<usize> {
        match tape.shape(v).first() {
            Some(&m) if m > 0 => Ok(m),
            _ => Err(Error::shape("loss batch", tape.shape(v), &[1])),
        }
    }

    /// `(1/m) Σₖ ‖xₖ − gxₖ‖₁`.
    pub fn ae_loss<T: Real>(tape: &mut Tape<T>, x: Var, gx: Var) -> Result<Var> {
        let m = batch_of(tape, x)?;
        let diff = tape.sub(x, gx)?;
        let l1 = tape.l1_norm(diff);
        Ok(tape.scale(l1, T::ONE / T::from_f64(m as f64)))
    }

    /// `(1/m) Σₖ ‖D(xₖ) − D(gxₖ)‖₁`; rows must be paired.
    pub fn paired_adv_loss<T: Real>(tape: &mut Tape<T>, d_real: Var, d_fake: Var) -> Result<Var> {
        if tape.shape(d_real) != tape.shape(d_fake) {
            return Err(Error::shape(
                "paired adversarial loss (unpaired batches)",
                tape.shape(d_real),
                tape.shape(d_fake),
            ));
        }
        ae_loss(tape, d_real, d_fake)
    }

    fn order_invariant_mean<T: Real>(tape: &mut Tape<T>, v: Var) -> Result<Var> {
        let m = batch_of(tape, v)?;
        let s = tape.sum_order_invariant(v);
        Ok(tape.scale(s, T::ONE / T::from_f64(m as f64)))
    }

    /// `(1/m) Σ D(real) − (1/m') Σ D(fake)` over all vector-head entries.
    pub fn separable_adv_loss<T: Real>(tape: &mut Tape<T>, d_real: Var, d_fake: Var) -> Result<Var> {
        let (r, f) = (tape.shape(d_real), tape.shape(d_fake));
        if r.get(1..) != f.get(1..) {
            return Err(Error::shape("separable adversarial loss", r, f));
        }
        let a = order_invariant_mean(tape, d_real)?;
        let b = order_invariant_mean(tape, d_fake)?;
        tape.sub(a, b)
    }

    /// `mean D̂(real) − mean D̂(fake)` on scalar heads.
    pub fn wgan_loss<T: Real>(tape: &mut Tape<T>, s_real: Var, s_fake: Var) -> Result<Var> {
        for v in [s_real, s_fake] {
            if tape.shape(v).len() != 1 {
                return Err(Error::shape("wgan loss (scalar heads)", tape.shape(v), &[1]));
            }
        }
        let a = order_invariant_mean(tape, s_real)?;
        let b = order_invariant_mean(tape, s_fake)?;
        tape.sub(a, b)
    }

    /// Generator side of the wgan game: `−mean D̂(fake)`.
    pub fn wgan_generator_loss<T: Real>(tape: &mut Tape<T>, s_fake: Var) -> Result<Var> {
        let b = order_invariant_mean(tape, s_fake)?;
        Ok(tape.neg(b))
    }
}

fn eval<T: Real>(build: impl FnOnce(&mut Tape<T>) -> Result<Var>) -> Result<T> {
    let mut tape = Tape::new();
    let v = build(&mut tape)?;
    Ok(tape.value(v).item())
}

/// Per-pixel mean absolute difference, accumulated in f64.
pub fn recon_l1_per_pixel<T: Real>(x: &Tensor<T>, gx: &Tensor<T>) -> Result<f64> {
    if x.shape() != gx.shape() || x.numel() == 0 {
        return Err(Error::shape("reconstruction", x.shape(), gx.shape()));
    }
    let total: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| (a.to_f64() - b.to_f64()).abs()).sum();
    Ok(total / x.numel() as f64)
}

/// Autoencoder loss `(1/m) Σ ‖x − G(x, z)‖₁`.
pub fn ae_loss<T: Real>(x: &Batch<T>, g: &Generator<T>, z: &Tensor<T>) -> Result<T> {
    let gx = g.apply(&x.images, z)?;
    eval(|t| {
        let (a, b) = (t.constant(x.images.clone()), t.constant(gx));
        graph::ae_loss(t, a, b)
    })
}

fn heads<T: Real>(d: &Critic<T>, b: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    d.apply(b)
}

/// Paired vector-head loss between `x` and `gx` (index-aligned).
pub fn paired_adv_loss<T: Real>(x: &Batch<T>, gx: &Batch<T>, d: &Critic<T>) -> Result<T> {
    if x.len() != gx.len() {
        return Err(Error::Config(format!("paired loss needs aligned batches, got {} and {}", x.len(), gx.len())));
    }
    let (dr, _) = heads(d, &x.images)?;
    let (df, _) = heads(d, &gx.images)?;
    eval(|t| {
        let (a, b) = (t.constant(dr), t.constant(df));
        graph::paired_adv_loss(t, a, b)
    })
}

/// Separable loss; `gx` need not be paired with `x`.
pub fn separable_adv_loss<T: Real>(x: &Batch<T>, gx: &Batch<T>, d: &Critic<T>) -> Result<T> {
    let (dr, _) = heads(d, &x.images)?;
    let (df, _) = heads(d, &gx.images)?;
    eval(|t| {
        let (a, b) = (t.constant(dr), t.constant(df));
        graph::separable_adv_loss(t, a, b)
    })
}

/// Scalar-head loss `mean D̂(real) − mean D̂(fake)`.
pub fn wgan_loss<T: Real>(real: &Batch<T>, fake: &Batch<T>, d: &Critic<T>) -> Result<T> {
    let (_, sr) = heads(d, &real.images)?;
    let (_, sf) = heads(d, &fake.images)?;
    eval(|t| {
        let (a, b) = (t.constant(sr), t.constant(sf));
        graph::wgan_loss(t, a, b)
    })
}

/// Outcome of comparing the three adversarial forms on the same batches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChainReport {
    Applicable {
        paired: f64,
        separable: f64,
        wgan: f64,
        /// `max(|paired − separable|, |separable − wgan|)`.
        discrepancy: f64,
    },
    /// Elementwise separation does not hold, so the forms need not agree.
    NotApplicable { violations: usize },
}

impl ChainReport {
    pub fn discrepancy(&self) -> Option<f64> {
        match *self {
            ChainReport::Applicable { discrepancy, .. } => Some(discrepancy),
            ChainReport::NotApplicable { .. } => None,
        }
    }
}

/// Number of `(k, i)` with `Dᵢ(xₖ) < Dᵢ(gxₖ)`.
pub fn separation_violations<T: Real>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<usize> {
    if d_real.shape() != d_fake.shape() {
        return Err(Error::shape("separation", d_real.shape(), d_fake.shape()));
    }
    Ok(d_real.data().iter().zip(d_fake.data()).filter(|(a, b)| a < b).count())
}

/// Identity chain on precomputed vector heads `[m, n]` of paired batches.
/// The wgan form uses per-sample sums of the rows as the scalar head.
pub fn identity_chain<T: Real>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<ChainReport> {
    let violations = separation_violations(d_real, d_fake)?;
    if violations > 0 {
        return Ok(ChainReport::NotApplicable { violations });
    }
    let mut t = Tape::new();
    let (a, b) = (t.constant(d_real.clone()), t.constant(d_fake.clone()));
    let paired = graph::paired_adv_loss(&mut t, a, b)?;
    let separable = graph::separable_adv_loss(&mut t, a, b)?;
    let (sa, sb) = (t.sum_per_sample(a)?, t.sum_per_sample(b)?);
    let wgan = graph::wgan_loss(&mut t, sa, sb)?;
    let [p, s, w] = [paired, separable, wgan].map(|v| t.value(v).item().to_f64());
    Ok(ChainReport::Applicable { paired: p, separable: s, wgan: w, discrepancy: (p - s).abs().max((s - w).abs()) })
}

/// Identity chain through a critic: evaluates `D` on both batches and
/// compares the paired, separable and wgan forms (the latter on the
/// critic's own scalar head).
pub fn identity_chain_check<T: Real>(x: &Batch<T>, gx: &Batch<T>, d: &Critic<T>) -> Result<ChainReport> {
    let (dr, sr) = heads(d, &x.images)?;
    let (df, sf) = heads(d, &gx.images)?;
    identity_chain_with_heads(&dr, &df, &sr, &sf)
}

/// As [`identity_chain`], with explicit scalar heads for the wgan form.
pub fn identity_chain_with_heads<T: Real>(
    d_real: &Tensor<T>,
    d_fake: &Tensor<T>,
    s_real: &Tensor<T>,
    s_fake: &Tensor<T>,
) -> Result<ChainReport> {
    let report = identity_chain(d_real, d_fake)?;
    let ChainReport::Applicable { paired, separable, .. } = report else {
        return Ok(report);
    };
    let m = |s: &Tensor<T>| order_invariant_sum(s.data()).to_f64() / s.numel().max(1) as f64;
    let wgan = m(s_real) - m(s_fake);
    Ok(ChainReport::Applicable {
        paired,
        separable,
        wgan,
        discrepancy: (paired - separable).abs().max((separable - wgan).abs()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn on_tape(build: impl FnOnce(&mut Tape<f64>) -> Result<Var>) -> f64 {
        eval(build).unwrap()
    }

    fn c(t: &mut Tape<f64>, shape: &[usize], v: &[f64]) -> Var {
        t.constant(Tensor::from_f64(shape, v).unwrap())
    }

    #[test]
    fn ae_loss_hand_values() {
        assert_eq!(
            on_tape(|t| {
                let (x, g) = (c(t, &[1, 2], &[1.0, 0.0]), c(t, &[1, 2], &[0.0, 0.0]));
                graph::ae_loss(t, x, g)
            }),
            1.0
        );
        assert_eq!(
            on_tape(|t| {
                let (x, g) = (c(t, &[2, 2], &[1.0, 1.0, 0.0, 0.0]), c(t, &[2, 2], &[0.0, 1.0, 0.0, -2.0]));
                graph::ae_loss(t, x, g)
            }),
            1.5
        );
        assert_eq!(
            on_tape(|t| {
                let x = c(t, &[2, 2], &[0.3, -0.2, 0.9, 0.0]);
                graph::ae_loss(t, x, x)
            }),
            0.0
        );
    }

    #[test]
    fn identity_critic_hand_values() {
        let paired = on_tape(|t| {
            let (x, g) = (c(t, &[1, 2], &[1.0, 2.0]), c(t, &[1, 2], &[0.0, 1.0]));
            graph::paired_adv_loss(t, x, g)
        });
        let swapped = on_tape(|t| {
            let (x, g) = (c(t, &[1, 2], &[1.0, 2.0]), c(t, &[1, 2], &[0.0, 1.0]));
            graph::paired_adv_loss(t, g, x)
        });
        let separable = on_tape(|t| {
            let (x, g) = (c(t, &[1, 2], &[1.0, 2.0]), c(t, &[1, 2], &[0.0, 1.0]));
            graph::separable_adv_loss(t, x, g)
        });
        assert_eq!((paired, swapped, separable), (2.0, 2.0, 2.0));
        let wgan = on_tape(|t| {
            let (r, f) = (c(t, &[2], &[2.0, 4.0]), c(t, &[2], &[1.0, 1.0]));
            graph::wgan_loss(t, r, f)
        });
        assert_eq!(wgan, 2.0);
    }

    #[test]
    fn unpaired_batches_rejected() {
        let mut t = Tape::<f64>::new();
        let (x, g) = (c(&mut t, &[2, 2], &[0.0; 4]), c(&mut t, &[1, 2], &[0.0; 2]));
        assert!(graph::paired_adv_loss(&mut t, x, g).is_err());
        assert!(graph::separable_adv_loss(&mut t, x, g).is_ok());
    }

    #[test]
    fn identity_chain_hand_case_and_shift() {
        let x = Tensor::<f64>::from_f64(&[1, 2], &[1.0, 2.0]).unwrap();
        let g = Tensor::<f64>::from_f64(&[1, 2], &[0.0, 1.0]).unwrap();
        let r = identity_chain(&x, &g).unwrap();
        assert_eq!(r, ChainReport::Applicable { paired: 2.0, separable: 2.0, wgan: 2.0, discrepancy: 0.0 });
        let shifted = identity_chain(&x.map(|v| v + 1000.0), &g.map(|v| v + 1000.0)).unwrap();
        assert_eq!(shifted.discrepancy(), Some(0.0));
        assert_eq!(identity_chain(&g, &x).unwrap(), ChainReport::NotApplicable { violations: 2 });
    }

    #[test]
    fn batch_validation() {
        assert!(Batch::new(Tensor::<f32>::full(&[1, 1, 2, 2], 1.5)).is_err());
        assert!(Batch::new(Tensor::<f32>::zeros(&[0, 1, 2, 2])).is_err());
        let b = Batch::new(Tensor::<f32>::zeros(&[2, 1, 2, 2])).unwrap();
        assert!(b.clone().with_generated(Tensor::zeros(&[1, 1, 2, 2])).is_err());
        assert_eq!(b.len(), 2);
        assert!(LossBundle::new(0.0, f64::NAN, 0.0).is_err());
    }
}
