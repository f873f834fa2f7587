//! conv2d against a textbook nested-loop cross-correlation, on integer data
//! so that both sides are exact in f64 and must agree bit for bit.

use advlab::autodiff::Tape;
use advlab::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `y[b,o,i,j] = bias[o] + Σ_{c,u,v} x[b,c,i·s+u−p, j·s+v−p] · k[o,c,u,v]`,
/// out-of-range input reads as zero.
#[allow(clippy::too_many_arguments)]
fn nested_loop_conv(
    x: &[f64],
    k: &[f64],
    bias: &[f64],
    (batch, cin, h, w): (usize, usize, usize, usize),
    (cout, kh, kw): (usize, usize, usize),
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut y = vec![0.0; batch * cout * oh * ow];
    for b in 0..batch {
        for o in 0..cout {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bias[o];
                    for c in 0..cin {
                        for u in 0..kh {
                            for v in 0..kw {
                                let r = (i * stride + u) as isize - pad as isize;
                                let q = (j * stride + v) as isize - pad as isize;
                                if r < 0 || q < 0 || r >= h as isize || q >= w as isize {
                                    continue;
                                }
                                let xi = ((b * cin + c) * h + r as usize) * w + q as usize;
                                acc += x[xi] * k[((o * cin + c) * kh + u) * kw + v];
                            }
                        }
                    }
                    y[((b * cout + o) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    (y, oh, ow)
}

fn ints(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-4i32..=4) as f64).collect()
}

#[test]
fn conv2d_matches_nested_loops_on_every_small_geometry() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cases = 0;
    for h in 1..=8 {
        for w in 1..=8 {
            for kh in 1..=3 {
                for kw in 1..=3 {
                    for stride in [1, 2] {
                        for pad in [0, 1] {
                            if kh > h + 2 * pad || kw > w + 2 * pad {
                                continue;
                            }
                            let (batch, cin, cout) = (2, 2, 3);
                            let x = ints(&mut rng, batch * cin * h * w);
                            let k = ints(&mut rng, cout * cin * kh * kw);
                            let bias = ints(&mut rng, cout);
                            let (expected, oh, ow) =
                                nested_loop_conv(&x, &k, &bias, (batch, cin, h, w), (cout, kh, kw), stride, pad);

                            let mut tape = Tape::<f64>::new();
                            let xv = tape.constant(Tensor::new(&[batch, cin, h, w], x).unwrap());
                            let kv = tape.constant(Tensor::new(&[cout, cin, kh, kw], k).unwrap());
                            let bv = tape.constant(Tensor::new(&[cout], bias).unwrap());
                            let y = tape.conv2d(xv, kv, Some(bv), stride, pad).unwrap();
                            let got = tape.value(y);
                            assert_eq!(got.shape(), [batch, cout, oh, ow]);
                            assert_eq!(got.data(), &expected[..], "h={h} w={w} k={kh}x{kw} stride={stride} pad={pad}");
                            cases += 1;
                        }
                    }
                }
            }
        }
    }
    assert!(cases > 2000, "only {cases} geometries exercised");
}

#[test]
fn conv2d_without_bias_and_single_channel() {
    // 3×3 input, 2×2 kernel of ones, stride 1, no padding: window sums.
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_f64(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]).unwrap());
    let k = tape.constant(Tensor::from_f64(&[1, 1, 2, 2], &[1., 1., 1., 1.]).unwrap());
    let y = tape.conv2d(x, k, None, 1, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[12., 16., 24., 28.]);
}

#[test]
fn conv2d_rejects_mismatched_channels() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let k = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
    assert!(tape.conv2d(x, k, None, 1, 1).is_err());
}
