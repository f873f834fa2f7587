//! Forward and backward kernels for the structured ops. Everything here works
//! on raw row-major slices; shape validation happens on the tape.

use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kw) / self.stride + 1
    }

    /// Rows of the unrolled patch matrix.
    pub fn patch_len(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    /// Columns of the unrolled patch matrix: one per output pixel per sample.
    pub fn columns(&self) -> usize {
        self.batch * self.out_h() * self.out_w()
    }
}

/// Output positions `[lo, hi)` along one axis whose input index
/// `o * stride + k - pad` falls inside `[0, extent)`.
#[inline]
fn valid_range(out: usize, extent: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if extent + pad > k { ((extent - 1 + pad - k) / stride + 1).min(out) } else { 0 };
    (lo, hi.max(lo))
}

/// Unrolls input patches into a `[patch_len, batch * out_h * out_w]` matrix.
pub fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    let ncols = g.columns();
    let s = g.stride;
    let mut cols = vec![T::ZERO; g.patch_len() * ncols];
    for ci in 0..g.in_ch {
        for ki in 0..g.kh {
            let (r_lo, r_hi) = valid_range(oh, g.in_h, ki, s, g.pad);
            for kj in 0..g.kw {
                let (c_lo, c_hi) = valid_range(ow, g.in_w, kj, s, g.pad);
                if c_lo >= c_hi {
                    continue;
                }
                let iw0 = c_lo * s + kj - g.pad;
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst_row = &mut cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.batch {
                    let src = &x[(b * g.in_ch + ci) * g.in_h * g.in_w..][..g.in_h * g.in_w];
                    let dst = &mut dst_row[b * plane..(b + 1) * plane];
                    for r in r_lo..r_hi {
                        let ih = r * s + ki - g.pad;
                        let src_row = &src[ih * g.in_w..(ih + 1) * g.in_w];
                        let d = &mut dst[r * ow + c_lo..r * ow + c_hi];
                        if s == 1 {
                            d.copy_from_slice(&src_row[iw0..iw0 + d.len()]);
                        } else {
                            for (dv, sv) in d.iter_mut().zip(src_row[iw0..].iter().step_by(s)) {
                                *dv = *sv;
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    let ncols = g.columns();
    let s = g.stride;
    for ci in 0..g.in_ch {
        for ki in 0..g.kh {
            let (r_lo, r_hi) = valid_range(oh, g.in_h, ki, s, g.pad);
            for kj in 0..g.kw {
                let (c_lo, c_hi) = valid_range(ow, g.in_w, kj, s, g.pad);
                if c_lo >= c_hi {
                    continue;
                }
                let iw0 = c_lo * s + kj - g.pad;
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src_row = &cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.batch {
                    let dst = &mut dx[(b * g.in_ch + ci) * g.in_h * g.in_w..][..g.in_h * g.in_w];
                    let src = &src_row[b * plane..(b + 1) * plane];
                    for r in r_lo..r_hi {
                        let ih = r * s + ki - g.pad;
                        let dst_row = &mut dst[ih * g.in_w..(ih + 1) * g.in_w];
                        let sv = &src[r * ow + c_lo..r * ow + c_hi];
                        if s == 1 {
                            for (d, &v) in dst_row[iw0..iw0 + sv.len()].iter_mut().zip(sv) {
                                *d += v;
                            }
                        } else {
                            for (d, &v) in dst_row[iw0..].iter_mut().step_by(s).zip(sv) {
                                *d += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation through im2col + GEMM. Returns the output and the
/// unrolled patches (kept for the kernel gradient).
pub fn conv2d_forward<T: Real>(x: &[T], kernel: &[T], bias: Option<&[T]>, g: &ConvGeom) -> (Vec<T>, Vec<T>) {
    let cols = im2col(x, g);
    let k = g.patch_len();
    let n = g.columns();
    let mut tmp = vec![T::ZERO; g.out_ch * n];
    T::gemm(g.out_ch, k, n, T::ONE, kernel, k as isize, 1, &cols, n as isize, 1, T::ZERO, &mut tmp, n as isize, 1);
    let plane = g.out_h() * g.out_w();
    let mut out = vec![T::ZERO; g.batch * g.out_ch * plane];
    for co in 0..g.out_ch {
        let bv = bias.map_or(T::ZERO, |b| b[co]);
        for b in 0..g.batch {
            let src = &tmp[co * n + b * plane..][..plane];
            let dst = &mut out[(b * g.out_ch + co) * plane..][..plane];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s + bv;
            }
        }
    }
    (out, cols)
}

pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub fn conv2d_backward<T: Real>(
    dout: &[T],
    kernel: &[T],
    cols: &[T],
    g: &ConvGeom,
    want_input: bool,
    want_kernel: bool,
    want_bias: bool,
) -> ConvGrads<T> {
    let k = g.patch_len();
    let n = g.columns();
    let plane = g.out_h() * g.out_w();
    // [out_ch, batch * plane], matching the column order of `cols`
    let mut dtmp = vec![T::ZERO; g.out_ch * n];
    for co in 0..g.out_ch {
        for b in 0..g.batch {
            let src = &dout[(b * g.out_ch + co) * plane..][..plane];
            dtmp[co * n + b * plane..][..plane].copy_from_slice(src);
        }
    }

    let kernel_grad = want_kernel.then(|| {
        let mut dk = vec![T::ZERO; g.out_ch * k];
        T::gemm(g.out_ch, n, k, T::ONE, &dtmp, n as isize, 1, cols, 1, n as isize, T::ZERO, &mut dk, k as isize, 1);
        dk
    });

    let bias_grad = want_bias
        .then(|| (0..g.out_ch).map(|co| dtmp[co * n..(co + 1) * n].iter().fold(T::ZERO, |a, &v| a + v)).collect());

    let input_grad = want_input.then(|| {
        let mut dcols = vec![T::ZERO; k * n];
        T::gemm(
            k,
            g.out_ch,
            n,
            T::ONE,
            kernel,
            1,
            k as isize,
            &dtmp,
            n as isize,
            1,
            T::ZERO,
            &mut dcols,
            n as isize,
            1,
        );
        let mut dx = vec![T::ZERO; g.batch * g.in_ch * g.in_h * g.in_w];
        col2im(&dcols, g, &mut dx);
        dx
    });

    ConvGrads { input: input_grad, kernel: kernel_grad, bias: bias_grad }
}

/// `y = x W^T + b` for `x: [batch, inp]`, `W: [out, inp]`.
pub fn dense_forward<T: Real>(x: &[T], w: &[T], b: Option<&[T]>, batch: usize, inp: usize, out: usize) -> Vec<T> {
    let mut y = vec![T::ZERO; batch * out];
    if let Some(b) = b {
        for row in y.chunks_mut(out) {
            row.copy_from_slice(b);
        }
    }
    T::gemm(batch, inp, out, T::ONE, x, inp as isize, 1, w, 1, inp as isize, T::ONE, &mut y, out as isize, 1);
    y
}

pub fn dense_backward_input<T: Real>(dy: &[T], w: &[T], batch: usize, inp: usize, out: usize) -> Vec<T> {
    let mut dx = vec![T::ZERO; batch * inp];
    T::gemm(batch, out, inp, T::ONE, dy, out as isize, 1, w, inp as isize, 1, T::ZERO, &mut dx, inp as isize, 1);
    dx
}

pub fn dense_backward_weight<T: Real>(dy: &[T], x: &[T], batch: usize, inp: usize, out: usize) -> Vec<T> {
    let mut dw = vec![T::ZERO; out * inp];
    T::gemm(out, batch, inp, T::ONE, dy, 1, out as isize, x, inp as isize, 1, T::ZERO, &mut dw, inp as isize, 1);
    dw
}

/// Nearest-neighbour 2x upsampling of `[planes, h, w]`.
pub fn upsample2x<T: Real>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut y = vec![T::ZERO; planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..][..h * w];
        let dst = &mut y[p * oh * ow..][..oh * ow];
        for r in 0..oh {
            for c in 0..ow {
                dst[r * ow + c] = src[(r / 2) * w + c / 2];
            }
        }
    }
    y
}

pub fn upsample2x_backward<T: Real>(dy: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![T::ZERO; planes * h * w];
    for p in 0..planes {
        let src = &dy[p * oh * ow..][..oh * ow];
        let dst = &mut dx[p * h * w..][..h * w];
        for r in 0..h {
            for c in 0..w {
                let i = 2 * r * ow + 2 * c;
                dst[r * w + c] = src[i] + src[i + 1] + src[i + ow] + src[i + ow + 1];
            }
        }
    }
    dx
}

/// 2x2 mean pooling with stride 2 of `[planes, h, w]`, `h` and `w` even.
pub fn avgpool2x<T: Real>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let mut y = vec![T::ZERO; planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..][..h * w];
        let dst = &mut y[p * oh * ow..][..oh * ow];
        for r in 0..oh {
            for c in 0..ow {
                let i = 2 * r * w + 2 * c;
                dst[r * ow + c] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
            }
        }
    }
    y
}

pub fn avgpool2x_backward<T: Real>(dy: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let mut dx = vec![T::ZERO; planes * h * w];
    for p in 0..planes {
        let src = &dy[p * oh * ow..][..oh * ow];
        let dst = &mut dx[p * h * w..][..h * w];
        for r in 0..h {
            for c in 0..w {
                dst[r * w + c] = src[(r / 2) * ow + c / 2] * quarter;
            }
        }
    }
    dx
}

/// Reference cross-correlation by direct nested loops. Slow; used by the
/// oracle tests and the gradient-check command.
pub fn conv2d_direct<T: Real>(x: &[T], kernel: &[T], g: &ConvGeom) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = vec![T::ZERO; g.batch * g.out_ch * oh * ow];
    for b in 0..g.batch {
        for co in 0..g.out_ch {
            for r in 0..oh {
                for c in 0..ow {
                    let mut acc = T::ZERO;
                    for ci in 0..g.in_ch {
                        for ki in 0..g.kh {
                            for kj in 0..g.kw {
                                let ih = (r * g.stride + ki) as isize - g.pad as isize;
                                let iw = (c * g.stride + kj) as isize - g.pad as isize;
                                if ih < 0 || iw < 0 || ih >= g.in_h as isize || iw >= g.in_w as isize {
                                    continue;
                                }
                                let xv = x[((b * g.in_ch + ci) * g.in_h + ih as usize) * g.in_w + iw as usize];
                                let kv = kernel[((co * g.in_ch + ci) * g.kh + ki) * g.kw + kj];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((b * g.out_ch + co) * oh + r) * ow + c] = acc;
                }
            }
        }
    }
    out
}
