//! Ground-truth oracles for the two synthetic features.
//!
//! Both oracles work on the first channel of a `[C, H, W]` image (the
//! synthetic domains repeat one plane across channels) and compare pixels
//! against the fixed background level [`BACKGROUND`].
//!
//! * Foreground: pixels with `|p − BACKGROUND| > FOREGROUND_THRESHOLD`.
//! * Centroid: mean pixel position over the foreground, weighted by
//!   `|p − BACKGROUND|`, in pixel-index coordinates (row, col).
//! * Texture score: the foreground is mean-centred and everything outside
//!   it set to zero; its 2-D DFT power `P(f_r, f_c)` (DC excluded) is then
//!   averaged over two bands, with `F = [TEXTURE_BAND_LO, TEXTURE_BAND_HI]`
//!   cycles per pixel:
//!
//!   ```text
//!   stripe band   |f_r| ∈ F,  |f_c| ≤ STRIPE_BAND_WIDTH
//!   dot band      |f_r| ∈ F,  |f_c| ∈ F
//!   c_s, c_d      mean power per bin in each band / mean power per bin overall
//!   b_s, b_d      max(c − BAND_CONCENTRATION, 0)
//!   score         (b_s − b_d) / (b_s + b_d), or 0 if both are 0
//!   ```
//!
//!   Horizontal stripes put their power at `(±f, 0)` and score near +1;
//!   dots (a product of row and column cosines) put it at `(±f, ±f)` and
//!   score near −1. Flat shapes and unstructured noise concentrate power in
//!   neither band and score 0.
//!
//! Changing any constant changes what the metrics mean, so they are
//! versioned together as [`ORACLE_VERSION`].

use crate::tensor::{Real, Tensor};

pub const ORACLE_VERSION: &str = "oracles-v2";
pub const FOREGROUND_THRESHOLD: f64 = 0.2;
pub const BACKGROUND: f64 = -0.9;
pub const TEXTURE_BAND_LO: f64 = 1.0 / 7.0;
pub const TEXTURE_BAND_HI: f64 = 1.0 / 3.5;
pub const STRIPE_BAND_WIDTH: f64 = 1.0 / 16.0;
pub const BAND_CONCENTRATION: f64 = 2.0;

fn plane<T: Real>(img: &Tensor<T>) -> (usize, usize, Vec<f64>) {
    let s = img.shape();
    let (h, w) = match *s {
        [_, h, w] => (h, w),
        [h, w] => (h, w),
        _ => panic!("oracle expects a [C, H, W] or [H, W] image, got {s:?}"),
    };
    (h, w, img.data()[..h * w].iter().map(|v| v.to_f64()).collect())
}

fn is_foreground(p: f64) -> bool {
    (p - BACKGROUND).abs() > FOREGROUND_THRESHOLD
}

/// Intensity-weighted centroid `(row, col)` of the foreground, or `None`
/// when no pixel is foreground.
pub fn shape_centroid<T: Real>(img: &Tensor<T>) -> Option<(f64, f64)> {
    let (h, w, p) = plane(img);
    let (mut total, mut sr, mut sc) = (0.0, 0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            let v = p[r * w + c];
            if is_foreground(v) {
                let weight = (v - BACKGROUND).abs();
                total += weight;
                sr += weight * r as f64;
                sc += weight * c as f64;
            }
        }
    }
    (total > 0.0).then(|| (sr / total, sc / total))
}

/// Power spectrum `|DFT|²` of a real `h × w` plane, row-major.
fn power_spectrum(h: usize, w: usize, v: &[f64]) -> Vec<f64> {
    let twiddle = |n: usize| -> Vec<(f64, f64)> {
        (0..n)
            .map(|k| {
                let a = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
                (a.cos(), a.sin())
            })
            .collect()
    };
    let (tw, th) = (twiddle(w), twiddle(h));
    // Transform rows, then columns.
    let mut rows = vec![(0.0, 0.0); h * w];
    for r in 0..h {
        for k in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for c in 0..w {
                let (cr, ci) = tw[(k * c) % w];
                re += v[r * w + c] * cr;
                im += v[r * w + c] * ci;
            }
            rows[r * w + k] = (re, im);
        }
    }
    let mut power = vec![0.0; h * w];
    for kc in 0..w {
        for kr in 0..h {
            let (mut re, mut im) = (0.0, 0.0);
            for r in 0..h {
                let (xr, xi) = rows[r * w + kc];
                let (cr, ci) = th[(kr * r) % h];
                re += xr * cr - xi * ci;
                im += xr * ci + xi * cr;
            }
            power[kr * w + kc] = re * re + im * im;
        }
    }
    power
}

/// Signed stripe-versus-dot texture score in `[-1, 1]`.
pub fn texture_score<T: Real>(img: &Tensor<T>) -> f64 {
    let (h, w, p) = plane(img);
    let fg: Vec<bool> = p.iter().map(|&v| is_foreground(v)).collect();
    let count = fg.iter().filter(|&&f| f).count();
    if count == 0 {
        return 0.0;
    }
    let mean = p.iter().zip(&fg).filter(|(_, &f)| f).map(|(v, _)| v).sum::<f64>() / count as f64;
    let centred: Vec<f64> = p.iter().zip(&fg).map(|(&v, &f)| if f { v - mean } else { 0.0 }).collect();
    let power = power_spectrum(h, w, &centred);

    let freq = |k: usize, n: usize| {
        let k = if 2 * k < n { k as f64 } else { k as f64 - n as f64 };
        (k / n as f64).abs()
    };
    let in_band = |f: f64| (TEXTURE_BAND_LO..=TEXTURE_BAND_HI).contains(&f);
    let (mut total, mut bins) = (0.0, 0usize);
    let (mut stripe, mut stripe_bins) = (0.0, 0usize);
    let (mut dot, mut dot_bins) = (0.0, 0usize);
    for kr in 0..h {
        for kc in 0..w {
            if kr == 0 && kc == 0 {
                continue;
            }
            let e = power[kr * w + kc];
            total += e;
            bins += 1;
            let (fr, fc) = (freq(kr, h), freq(kc, w));
            if in_band(fr) && fc <= STRIPE_BAND_WIDTH {
                stripe += e;
                stripe_bins += 1;
            } else if in_band(fr) && in_band(fc) {
                dot += e;
                dot_bins += 1;
            }
        }
    }
    if total <= 0.0 || stripe_bins == 0 || dot_bins == 0 {
        return 0.0;
    }
    let average = total / bins as f64;
    let bs = (stripe / stripe_bins as f64 / average - BAND_CONCENTRATION).max(0.0);
    let bd = (dot / dot_bins as f64 / average - BAND_CONCENTRATION).max(0.0);
    if bs + bd == 0.0 {
        return 0.0;
    }
    (bs - bd) / (bs + bd)
}
