//! Central finite-difference verification of tape gradients (64-bit).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::tape::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many coordinates per input (sampled by `seed`).
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { eps: 1e-5, max_coords: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    /// (input index, flat coordinate) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Coordinates whose perturbation switched the branch of a ReLU/|x| and
    /// therefore have no two-sided derivative to compare against.
    pub skipped_kinks: usize,
}

/// Relative error as reported by the checker.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Checks `f` at a single input point.
pub fn gradient_check<F>(f: F, point: &Tensor<f64>, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let opts = GradCheckOptions { eps, ..Default::default() };
    gradient_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(point), &opts)
}

/// Checks `f` with respect to every tensor in `points`.
pub fn gradient_check_many<F>(f: F, points: &[Tensor<f64>], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor<f64>]| -> Result<(f64, Option<u64>)> {
        let mut tape = Tape::with_kink_tracking();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape.value(out).item(), tape.kink_fingerprint()))
    };

    let mut tape = Tape::with_kink_tracking();
    let vars: Vec<Var> = points.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let base_kinks = tape.kink_fingerprint();
    let grads = tape.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0, skipped_kinks: 0 };
    let mut work: Vec<Tensor<f64>> = points.to_vec();
    for (which, point) in points.iter().enumerate() {
        let n = point.numel();
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let analytic = grads.wrt(vars[which]);
        for i in coords {
            let a = analytic.map_or(0.0, |g| g.data()[i]);
            let orig = point.data()[i];
            work[which].data_mut()[i] = orig + opts.eps;
            let (fp, kp) = eval(&work)?;
            work[which].data_mut()[i] = orig - opts.eps;
            let (fm, km) = eval(&work)?;
            work[which].data_mut()[i] = orig;
            if kp != base_kinks || km != base_kinks {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * opts.eps);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((which, i));
                }
            }
        }
    }
    Ok(report)
}
