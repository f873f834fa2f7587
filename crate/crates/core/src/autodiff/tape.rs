//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every op evaluates eagerly and appends a node; node inputs always precede
//! the node itself, so a single reverse sweep over the node list visits the
//! graph in reverse topological order. Gradients accumulate at shared nodes.

use crate::autodiff::kernels::{self, ConvGeom};
use crate::error::{Error, Result};
use crate::tensor::{order_invariant_sum, Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    SumOrderInvariant(Var),
    SumPerSample(Var),
    Dense { x: Var, w: Var, b: Option<Var> },
    Conv { x: Var, k: Var, b: Option<Var>, geom: ConvGeom, cols: Vec<T> },
    Relu(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Abs(Var),
    L1Norm(Var),
    Upsample2x(Var),
    AvgPool2x(Var),
    Concat(Var, Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded computation graph.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    kinks: Option<u64>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads<T> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Grads<T> {
    /// Gradient of the root with respect to `v`; `None` when `v` does not
    /// require a gradient or is unreachable from the root.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.slots.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.slots.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_shape(op: &'static str, a: &Tensor<impl Real>, b: &Tensor<impl Real>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn image_dims(op: &'static str, t: &Tensor<impl Real>) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(Error::shape(op, t.shape(), &[0, 0, 0, 0])),
    }
}

const FNV_PRIME: u64 = 0x100_0000_01b3;

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), kinks: None }
    }

    /// A tape that fingerprints the active branch of every non-smooth op
    /// (ReLU, leaky ReLU, absolute value). Finite-difference checks use the
    /// fingerprint to detect perturbations that cross a kink.
    pub fn with_kink_tracking() -> Self {
        Tape { nodes: Vec::new(), kinks: Some(0xcbf2_9ce4_8422_2325) }
    }

    pub fn kink_fingerprint(&self) -> Option<u64> {
        self.kinks
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn note_kinks(&mut self, a: Var) {
        if let Some(h) = self.kinks.as_mut() {
            for &x in self.nodes[a.0].value.data() {
                let branch = if x > T::ZERO {
                    1u64
                } else if x < T::ZERO {
                    2
                } else {
                    3
                };
                *h = (*h ^ branch).wrapping_mul(FNV_PRIME);
            }
        }
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(name, va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape(), data)?;
        let ng = self.grad_of(&[a, b]);
        Ok(self.push(out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let out = self.value(a).map(|x| x * factor);
        let ng = self.grad_of(&[a]);
        self.push(out, Op::Scale(a, factor), ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::ONE)
    }

    pub fn add_scalar(&mut self, a: Var, shift: T) -> Var {
        let out = self.value(a).map(|x| x + shift);
        let ng = self.grad_of(&[a]);
        self.push(out, Op::AddScalar(a), ng)
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().fold(T::ZERO, |acc, &v| acc + v);
        let ng = self.grad_of(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = T::from_f64(v.numel() as f64);
        let s = v.data().iter().fold(T::ZERO, |acc, &x| acc + x) / n;
        let ng = self.grad_of(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// Sum of all elements whose value is independent of element order
    /// (see [`order_invariant_sum`]).
    pub fn sum_order_invariant(&mut self, a: Var) -> Var {
        let s = order_invariant_sum(self.value(a).data());
        let ng = self.grad_of(&[a]);
        self.push(Tensor::scalar(s), Op::SumOrderInvariant(a), ng)
    }

    /// Sums every axis except the leading one: `[B, ...] -> [B]`.
    pub fn sum_per_sample(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let Some(&batch) = v.shape().first() else {
            return Err(Error::shape("sum_per_sample", v.shape(), &[0]));
        };
        let per = v.numel() / batch.max(1);
        let data = v.data().chunks(per.max(1)).map(|c| c.iter().fold(T::ZERO, |acc, &x| acc + x)).collect();
        let out = Tensor::new(&[batch], data)?;
        let ng = self.grad_of(&[a]);
        Ok(self.push(out, Op::SumPerSample(a), ng))
    }

    /// Affine map `x W^T + b`, `x: [B, in]`, `w: [out, in]`, `b: [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        let (batch, inp, out) = match (vx.shape(), vw.shape()) {
            (&[batch, inp], &[out, win]) if inp == win => (batch, inp, out),
            _ => return Err(Error::shape("dense", vx.shape(), vw.shape())),
        };
        if let Some(b) = b {
            if self.value(b).shape() != [out] {
                return Err(Error::shape("dense bias", self.value(b).shape(), &[out]));
            }
        }
        let y = kernels::dense_forward(vx.data(), vw.data(), b.map(|b| self.value(b).data()), batch, inp, out);
        let out_t = Tensor::new(&[batch, out], y)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.grad_of(&deps);
        Ok(self.push(out_t, Op::Dense { x, w, b }, ng))
    }

    /// 2-D cross-correlation, `x: [B, Cin, H, W]`, `k: [Cout, Cin, kh, kw]`,
    /// optional per-channel bias `[Cout]`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (vx, vk) = (self.value(x), self.value(k));
        let (batch, in_ch, in_h, in_w) = image_dims("conv2d input", vx)?;
        let (out_ch, kin, kh, kw) = match *vk.shape() {
            [a, b, c, d] => (a, b, c, d),
            _ => return Err(Error::shape("conv2d kernel", vk.shape(), vx.shape())),
        };
        if kin != in_ch || kh > in_h + 2 * pad || kw > in_w + 2 * pad || stride == 0 || kh == 0 || kw == 0 {
            return Err(Error::shape("conv2d", vx.shape(), vk.shape()));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [out_ch] {
                return Err(Error::shape("conv2d bias", self.value(b).shape(), &[out_ch]));
            }
        }
        let geom = ConvGeom { batch, in_ch, in_h, in_w, out_ch, kh, kw, stride, pad };
        let (y, cols) = kernels::conv2d_forward(vx.data(), vk.data(), b.map(|b| self.value(b).data()), &geom);
        let out = Tensor::new(&[batch, out_ch, geom.out_h(), geom.out_w()], y)?;
        let mut deps = vec![x, k];
        deps.extend(b);
        let ng = self.grad_of(&deps);
        let cols = if self.nodes[k.0].needs_grad { cols } else { Vec::new() };
        Ok(self.push(out, Op::Conv { x, k, b, geom, cols }, ng))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.note_kinks(a);
        let out = self.value(a).map(|x| if x > T::ZERO { x } else { T::ZERO });
        let ng = self.grad_of(&[a]);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.note_kinks(a);
        let out = self.value(a).map(|x| if x > T::ZERO { x } else { x * slope });
        let ng = self.grad_of(&[a]);
        self.push(out, Op::LeakyRelu(a, slope), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(Real::tanh);
        let ng = self.grad_of(&[a]);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.note_kinks(a);
        let out = self.value(a).map(Real::abs);
        let ng = self.grad_of(&[a]);
        self.push(out, Op::Abs(a), ng)
    }

    /// Sum of absolute values of all elements.
    pub fn l1_norm(&mut self, a: Var) -> Var {
        self.note_kinks(a);
        let s = self.value(a).data().iter().fold(T::ZERO, |acc, &x| acc + x.abs());
        let ng = self.grad_of(&[a]);
        self.push(Tensor::scalar(s), Op::L1Norm(a), ng)
    }

    pub fn upsample2x(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let (b, c, h, w) = image_dims("upsample2x", v)?;
        let y = kernels::upsample2x(v.data(), b * c, h, w);
        let out = Tensor::new(&[b, c, 2 * h, 2 * w], y)?;
        let ng = self.grad_of(&[a]);
        Ok(self.push(out, Op::Upsample2x(a), ng))
    }

    pub fn avgpool2x(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let (b, c, h, w) = image_dims("avgpool2x", v)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("avgpool2x", v.shape(), &[b, c, h / 2 * 2, w / 2 * 2]));
        }
        let y = kernels::avgpool2x(v.data(), b * c, h, w);
        let out = Tensor::new(&[b, c, h / 2, w / 2], y)?;
        let ng = self.grad_of(&[a]);
        Ok(self.push(out, Op::AvgPool2x(a), ng))
    }

    /// Concatenation along the channel axis of two `[B, C, H, W]` tensors.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (ba, ca, ha, wa) = image_dims("concat", va)?;
        let (bb, cb, hb, wb) = image_dims("concat", vb)?;
        if (ba, ha, wa) != (bb, hb, wb) {
            return Err(Error::shape("concat", va.shape(), vb.shape()));
        }
        let plane = ha * wa;
        let mut data = Vec::with_capacity(va.numel() + vb.numel());
        for s in 0..ba {
            data.extend_from_slice(&va.data()[s * ca * plane..(s + 1) * ca * plane]);
            data.extend_from_slice(&vb.data()[s * cb * plane..(s + 1) * cb * plane]);
        }
        let out = Tensor::new(&[ba, ca + cb, ha, wa], data)?;
        let ng = self.grad_of(&[a, b]);
        Ok(self.push(out, Op::Concat(a, b), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let ng = self.grad_of(&[a]);
        Ok(self.push(out, Op::Reshape(a), ng))
    }

    /// `[B, ...] -> [B, prod(...)]`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        let batch = shape.first().copied().unwrap_or(1);
        let per: usize = shape.iter().skip(1).product();
        self.reshape(a, &[batch, per])
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Grads<T>> {
        let rv = self.value(root);
        if rv.numel() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut slots: Vec<Option<Tensor<T>>> = Vec::new();
        slots.resize_with(root.0 + 1, || None);
        slots[root.0] = Some(Tensor::full(rv.shape(), T::ONE));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = slots[i].take() else { continue };
            self.propagate(node, &g, &mut slots)?;
            slots[i] = Some(g);
        }

        for (i, slot) in slots.iter_mut().enumerate() {
            if !self.nodes[i].needs_grad {
                *slot = None;
            }
        }
        Ok(Grads { slots })
    }

    fn accumulate(&self, slots: &mut [Option<Tensor<T>>], v: Var, grad: Vec<T>) -> Result<()> {
        if !self.nodes[v.0].needs_grad {
            return Ok(());
        }
        match &mut slots[v.0] {
            Some(existing) => {
                for (e, g) in existing.data_mut().iter_mut().zip(grad) {
                    *e += g;
                }
            }
            slot @ None => *slot = Some(Tensor::new(self.value(v).shape(), grad)?),
        }
        Ok(())
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, slots: &mut [Option<Tensor<T>>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(slots, *a, gd.to_vec())?;
                self.accumulate(slots, *b, gd.to_vec())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(slots, *a, gd.to_vec())?;
                self.accumulate(slots, *b, gd.iter().map(|&x| -x).collect())?;
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.nodes[a.0].needs_grad {
                    self.accumulate(slots, *a, gd.iter().zip(vb).map(|(&g, &y)| g * y).collect())?;
                }
                if self.nodes[b.0].needs_grad {
                    self.accumulate(slots, *b, gd.iter().zip(va).map(|(&g, &x)| g * x).collect())?;
                }
            }
            Op::Scale(a, f) => {
                self.accumulate(slots, *a, gd.iter().map(|&x| x * *f).collect())?;
            }
            Op::AddScalar(a) => self.accumulate(slots, *a, gd.to_vec())?,
            Op::Sum(a) | Op::SumOrderInvariant(a) => {
                let n = self.value(*a).numel();
                self.accumulate(slots, *a, vec![gd[0]; n])?;
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                let scale = gd[0] / T::from_f64(n as f64);
                self.accumulate(slots, *a, vec![scale; n])?;
            }
            Op::SumPerSample(a) => {
                let v = self.value(*a);
                let per = v.numel() / gd.len().max(1);
                let grad = gd.iter().flat_map(|&x| std::iter::repeat_n(x, per)).collect();
                self.accumulate(slots, *a, grad)?;
            }
            Op::Dense { x, w, b } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (batch, inp) = (vx.shape()[0], vx.shape()[1]);
                let out = vw.shape()[0];
                if self.nodes[x.0].needs_grad {
                    let dx = kernels::dense_backward_input(gd, vw.data(), batch, inp, out);
                    self.accumulate(slots, *x, dx)?;
                }
                if self.nodes[w.0].needs_grad {
                    let dw = kernels::dense_backward_weight(gd, vx.data(), batch, inp, out);
                    self.accumulate(slots, *w, dw)?;
                }
                if let Some(b) = b {
                    if self.nodes[b.0].needs_grad {
                        let mut db = vec![T::ZERO; out];
                        for row in gd.chunks(out) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        self.accumulate(slots, *b, db)?;
                    }
                }
            }
            Op::Conv { x, k, b, geom, cols } => {
                let want_b = b.is_some_and(|b| self.nodes[b.0].needs_grad);
                let grads = kernels::conv2d_backward(
                    gd,
                    self.value(*k).data(),
                    cols,
                    geom,
                    self.nodes[x.0].needs_grad,
                    self.nodes[k.0].needs_grad,
                    want_b,
                );
                if let Some(dx) = grads.input {
                    self.accumulate(slots, *x, dx)?;
                }
                if let Some(dk) = grads.kernel {
                    self.accumulate(slots, *k, dk)?;
                }
                if let (Some(b), Some(db)) = (b, grads.bias) {
                    self.accumulate(slots, *b, db)?;
                }
            }
            Op::Relu(a) => {
                let va = self.value(*a).data();
                let grad = gd.iter().zip(va).map(|(&g, &x)| if x > T::ZERO { g } else { T::ZERO }).collect();
                self.accumulate(slots, *a, grad)?;
            }
            Op::LeakyRelu(a, slope) => {
                let va = self.value(*a).data();
                let grad = gd.iter().zip(va).map(|(&g, &x)| if x > T::ZERO { g } else { g * *slope }).collect();
                self.accumulate(slots, *a, grad)?;
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                let grad = gd.iter().zip(y).map(|(&g, &y)| g * (T::ONE - y * y)).collect();
                self.accumulate(slots, *a, grad)?;
            }
            Op::Abs(a) => {
                let va = self.value(*a).data();
                let grad = gd.iter().zip(va).map(|(&g, &x)| g * sign(x)).collect();
                self.accumulate(slots, *a, grad)?;
            }
            Op::L1Norm(a) => {
                let va = self.value(*a).data();
                let grad = va.iter().map(|&x| gd[0] * sign(x)).collect();
                self.accumulate(slots, *a, grad)?;
            }
            Op::Upsample2x(a) => {
                let (b, c, h, w) = image_dims("upsample2x", self.value(*a))?;
                self.accumulate(slots, *a, kernels::upsample2x_backward(gd, b * c, h, w))?;
            }
            Op::AvgPool2x(a) => {
                let (b, c, h, w) = image_dims("avgpool2x", self.value(*a))?;
                self.accumulate(slots, *a, kernels::avgpool2x_backward(gd, b * c, h, w))?;
            }
            Op::Concat(a, b) => {
                let (batch, ca, h, w) = image_dims("concat", self.value(*a))?;
                let cb = self.value(*b).shape()[1];
                let plane = h * w;
                let mut ga = Vec::with_capacity(batch * ca * plane);
                let mut gb = Vec::with_capacity(batch * cb * plane);
                for chunk in gd.chunks((ca + cb) * plane) {
                    ga.extend_from_slice(&chunk[..ca * plane]);
                    gb.extend_from_slice(&chunk[ca * plane..]);
                }
                self.accumulate(slots, *a, ga)?;
                self.accumulate(slots, *b, gb)?;
            }
            Op::Reshape(a) => self.accumulate(slots, *a, gd.to_vec())?,
        }
        Ok(())
    }
}

#[inline]
fn sign<T: Real>(x: T) -> T {
    if x > T::ZERO {
        T::ONE
    } else if x < T::ZERO {
        -T::ONE
    } else {
        T::ZERO
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn conv_scaling_identity() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let k = tape.constant(t(&[1, 1, 1, 1], &[2.0]));
        let y = tape.conv2d(x, k, None, 1, 0).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 3, 3]);
        assert!(tape.value(y).data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv_diagonal_kernel() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]));
        let k = tape.constant(t(&[1, 1, 2, 2], &[1., 0., 0., 1.]));
        let y = tape.conv2d(x, k, None, 1, 0).unwrap();
        // x[r][c] + x[r+1][c+1]
        let direct = kernels::conv2d_direct(
            tape.value(x).data(),
            tape.value(k).data(),
            &ConvGeom { batch: 1, in_ch: 1, in_h: 3, in_w: 3, out_ch: 1, kh: 2, kw: 2, stride: 1, pad: 0 },
        );
        assert_eq!(direct, vec![6., 8., 12., 14.]);
        assert_eq!(tape.value(y).data(), &direct[..]);
    }

    #[test]
    fn conv_zero_kernel_stride_two_halves_extent() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[2, 3, 8, 6], 0.7));
        let k = tape.constant(Tensor::zeros(&[4, 3, 2, 2]));
        let y = tape.conv2d(x, k, None, 2, 0).unwrap();
        assert_eq!(tape.shape(y), &[2, 4, 4, 3]);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let k = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
        let err = tape.conv2d(x, k, None, 1, 0).unwrap_err().to_string();
        assert!(err.contains("[1, 2, 4, 4]") && err.contains("[1, 3, 3, 3]"), "{err}");
        let big = tape.constant(Tensor::zeros(&[1, 2, 5, 5]));
        assert!(tape.conv2d(x, big, None, 1, 0).is_err());
    }

    #[test]
    fn relu_forward_and_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[3], &[1., -1., 0.]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[1., 0., 0.]);

        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2], &[2., -3.]));
        let y = tape.relu(x);
        let m = tape.mean(y);
        let g = tape.backward(m).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[0.5, 0.0]);
    }

    #[test]
    fn relu_leaves_nonnegative_input_unchanged() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[4], &[0., 0.5, 3., 1e-9]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn l1_norm_value_and_subgradient() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(t(&[3], &[0., 0., 0.]));
        let nz = tape.l1_norm(z);
        assert_eq!(tape.value(nz).item(), 0.0);

        let x = tape.param(t(&[3], &[1., -2., 3.]));
        let n = tape.l1_norm(x);
        assert_eq!(tape.value(n).item(), 6.0);
        let g = tape.backward(n).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[1., -1., 1.]);
    }

    #[test]
    fn abs_gradient_is_zero_at_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[3], &[0., -4., 2.]));
        let a = tape.abs(x);
        let s = tape.sum(a);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[0., -1., 1.]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::full(&[2, 3, 4], 0.3));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        let gx = g.wrt(x).unwrap();
        assert_eq!(gx.shape(), &[2, 3, 4]);
        assert!(gx.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mean_of_square_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2], &[1., 2.]));
        let sq = tape.mul(x, x).unwrap();
        let m = tape.mean(sq);
        let g = tape.backward(m).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[1., 2.]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2], &[1., 2.]));
        let y = tape.relu(x);
        assert!(matches!(tape.backward(y), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn diamond_graph_accumulates_path_gradients() {
        // f = sum(relu(x) * tanh(x) + relu(x)); shared subexpression relu(x)
        let xs = [0.7, -0.2, 1.3];
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[3], &xs));
        let r = tape.relu(x);
        let th = tape.tanh(x);
        let p = tape.mul(r, th).unwrap();
        let q = tape.add(p, r).unwrap();
        let s = tape.sum(q);
        let g = tape.backward(s).unwrap();
        for (i, &xi) in xs.iter().enumerate() {
            let dr: f64 = if xi > 0.0 { 1.0 } else { 0.0 };
            let path_mul = dr * xi.tanh() + xi.max(0.0) * (1.0 - xi.tanh().powi(2));
            let path_add = dr;
            let got = g.wrt(x).unwrap().data()[i];
            assert!((got - (path_mul + path_add)).abs() < 1e-14);
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(t(&[2], &[1., 2.]));
        let x = tape.param(t(&[2], &[3., 4.]));
        let p = tape.mul(c, x).unwrap();
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        assert!(g.wrt(c).is_none());
        assert_eq!(g.wrt(x).unwrap().data(), &[1., 2.]);
    }

    #[test]
    fn concat_then_split_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::full(&[2, 1, 2, 2], 1.0));
        let b = tape.param(Tensor::full(&[2, 2, 2, 2], 2.0));
        let c = tape.concat_channels(a, b).unwrap();
        assert_eq!(tape.shape(c), &[2, 3, 2, 2]);
        assert_eq!(&tape.value(c).data()[..12], &[1., 1., 1., 1., 2., 2., 2., 2., 2., 2., 2., 2.]);
        let w = tape.constant(Tensor::new(&[2, 3, 2, 2], (0..24).map(|i| i as f64).collect()).unwrap());
        let p = tape.mul(c, w).unwrap();
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(a).unwrap().data(), &[0., 1., 2., 3., 12., 13., 14., 15.]);
    }

    #[test]
    fn ops_are_deterministic() {
        let run = || {
            let mut tape = Tape::<f32>::new();
            let x =
                tape.param(Tensor::new(&[2, 2, 6, 6], (0..144).map(|i| (i as f32 * 0.37).sin()).collect()).unwrap());
            let k = tape.param(Tensor::new(&[3, 2, 3, 3], (0..54).map(|i| (i as f32 * 0.11).cos()).collect()).unwrap());
            let y = tape.conv2d(x, k, None, 2, 1).unwrap();
            let r = tape.leaky_relu(y, 0.2);
            let s = tape.sum(r);
            let g = tape.backward(s).unwrap();
            (tape.value(s).item().to_bits(), g.wrt(k).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }
}
