//! Convolution values (hand-derived), gradients, and error contracts.

use super::*;
use crate::tensor::ops::{mul, sum};
use crate::tensor::{backward, grad_check, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn rand_vec(rng: &mut ChaCha20Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Independent reference convolution written the obvious quadruple-loop way.
fn conv_reference(
    x: &[f64],
    (b, cin, h, w): (usize, usize, usize, usize),
    k: &[f64],
    cout: usize,
    ksz: usize,
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = (h + 2 * pad - ksz) / stride + 1;
    let ow = (w + 2 * pad - ksz) / stride + 1;
    let mut out = vec![0.0; b * cout * oh * ow];
    for bi in 0..b {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |bs| bs[co]);
                    for ci in 0..cin {
                        for ky in 0..ksz {
                            for kx in 0..ksz {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    let xv = x[((bi * cin + ci) * h + iy as usize) * w
                                        + ix as usize];
                                    let kv = k[((co * cin + ci) * ksz + ky) * ksz + kx];
                                    acc += xv * kv;
                                }
                            }
                        }
                    }
                    out[((bi * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn identity_kernel_returns_input() {
    let tape = Tape::new();
    let ramp: Vec<f64> = (0..25).map(|v| v as f64).collect();
    let x = Tensor::from_vec(ramp.clone(), &[1, 1, 5, 5]).unwrap();
    // 3×3 kernel with a single 1 in the center.
    let mut kv = vec![0.0f64; 9];
    kv[4] = 1.0;
    let k = Tensor::from_vec(kv, &[1, 1, 3, 3]).unwrap();
    let y = conv2d(&tape, &x, &k, None, 1, 1).unwrap();
    assert_eq!(y.shape(), &[1, 1, 5, 5]);
    assert_eq!(y.to_vec(), ramp);
}

#[test]
fn mean_kernel_on_constant_input_shows_zero_padding() {
    // All-fives input through a 3×3 kernel of ninths with padding 1: interior
    // pixels average nine fives (= 5), corners see only four valid taps
    // (= 5·4/9 = 20/9).
    let tape = Tape::new();
    let x = Tensor::from_vec(vec![5.0f64; 25], &[1, 1, 5, 5]).unwrap();
    let k = Tensor::from_vec(vec![1.0 / 9.0; 9], &[1, 1, 3, 3]).unwrap();
    let y = conv2d(&tape, &x, &k, None, 1, 1).unwrap().to_vec();
    let corner = 20.0 / 9.0;
    for idx in [0, 4, 20, 24] {
        assert!((y[idx] - corner).abs() < 1e-12, "corner {idx}: {}", y[idx]);
    }
    assert!((y[12] - 5.0).abs() < 1e-12, "interior: {}", y[12]);
    // Edge (non-corner) pixels see six taps.
    assert!((y[2] - 5.0 * 6.0 / 9.0).abs() < 1e-12);
}

#[test]
fn stride_two_halves_each_axis() {
    let tape = Tape::new();
    let x = Tensor::from_vec((0..64).map(|v| v as f64).collect(), &[1, 1, 8, 8]).unwrap();
    let k = Tensor::from_vec(vec![1.0; 9], &[1, 1, 3, 3]).unwrap();
    let y = conv2d(&tape, &x, &k, None, 2, 1).unwrap();
    assert_eq!(y.shape(), &[1, 1, 4, 4]);
}

#[test]
fn matches_reference_convolution_on_random_cases() {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    for round in 0..30 {
        let b = rng.gen_range(1..3);
        let cin = rng.gen_range(1..4);
        let cout = rng.gen_range(1..4);
        let ksz = [1, 3, 5][rng.gen_range(0..3)];
        let h = rng.gen_range(ksz..ksz + 6);
        let w = rng.gen_range(ksz..ksz + 6);
        let stride = rng.gen_range(1..3);
        let pad = rng.gen_range(0..2);
        if h + 2 * pad < ksz || w + 2 * pad < ksz {
            continue;
        }
        let with_bias = rng.gen_bool(0.5);

        let xd = rand_vec(&mut rng, b * cin * h * w, -2.0, 2.0);
        let kd = rand_vec(&mut rng, cout * cin * ksz * ksz, -1.0, 1.0);
        let bd = rand_vec(&mut rng, cout, -1.0, 1.0);

        let tape = Tape::new();
        let x = Tensor::from_vec(xd.clone(), &[b, cin, h, w]).unwrap();
        let k = Tensor::from_vec(kd.clone(), &[cout, cin, ksz, ksz]).unwrap();
        let bias = Tensor::from_vec(bd.clone(), &[cout]).unwrap();
        let y = conv2d(&tape, &x, &k, with_bias.then_some(&bias), stride, pad).unwrap();
        let want = conv_reference(
            &xd,
            (b, cin, h, w),
            &kd,
            cout,
            ksz,
            with_bias.then_some(&bd[..]),
            stride,
            pad,
        );
        for (got, want) in y.to_vec().iter().zip(&want) {
            assert!((got - want).abs() < 1e-12, "round {round}: {got} vs {want}");
        }
    }
}

#[test]
fn conv_gradients_pass_finite_difference_checks() {
    let mut rng = ChaCha20Rng::seed_from_u64(19);
    for round in 0..20 {
        let b = rng.gen_range(1..3);
        let cin = rng.gen_range(1..3);
        let cout = rng.gen_range(1..3);
        let ksz = [1, 3][rng.gen_range(0..2)];
        let h = rng.gen_range(ksz + 1..ksz + 5);
        let w = rng.gen_range(ksz + 1..ksz + 5);
        let stride = rng.gen_range(1..3);
        let pad = if ksz == 3 { rng.gen_range(0..2) } else { 0 };

        let x = Tensor::param(rand_vec(&mut rng, b * cin * h * w, -2.0, 2.0), &[b, cin, h, w])
            .unwrap();
        let k = Tensor::param(
            rand_vec(&mut rng, cout * cin * ksz * ksz, -1.0, 1.0),
            &[cout, cin, ksz, ksz],
        )
        .unwrap();
        let bias = Tensor::param(rand_vec(&mut rng, cout, -0.5, 0.5), &[cout]).unwrap();
        let oh = (h + 2 * pad - ksz) / stride + 1;
        let ow = (w + 2 * pad - ksz) / stride + 1;
        let wt = Tensor::from_vec(rand_vec(&mut rng, b * cout * oh * ow, -1.0, 1.0), &[
            b, cout, oh, ow,
        ])
        .unwrap();

        let report = grad_check(
            |tape| {
                let y = conv2d(tape, &x, &k, Some(&bias), stride, pad)?;
                Ok(sum(tape, &mul(tape, &y, &wt)?))
            },
            &[x.clone(), k.clone(), bias.clone()],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "round {round}: max rel err {}", report.max_rel_err);
    }
}

#[test]
fn gradient_respects_batch_independence() {
    // The gradient w.r.t. one batch entry must not depend on the other
    // entries' data path: zero upstream gradient on entry 1 → zero dx there.
    let tape = Tape::new();
    let x = Tensor::param(vec![1.0f64; 2 * 1 * 3 * 3], &[2, 1, 3, 3]).unwrap();
    let k = Tensor::param(vec![0.5f64; 9], &[1, 1, 3, 3]).unwrap();
    let y = conv2d(&tape, &x, &k, None, 1, 1).unwrap();
    // Select only batch entry 0.
    let mut sel = vec![0.0f64; y.numel()];
    for v in sel.iter_mut().take(9) {
        *v = 1.0;
    }
    let w = Tensor::from_vec(sel, &[2, 1, 3, 3]).unwrap();
    let loss = sum(&tape, &mul(&tape, &y, &w).unwrap());
    backward(&tape, &loss).unwrap();
    let gx = x.grad().unwrap();
    assert!(gx[..9].iter().any(|&v| v != 0.0));
    assert!(gx[9..].iter().all(|&v| v == 0.0));
}

#[test]
fn rejects_bad_shapes_and_nonfinite_inputs() {
    let tape = Tape::new();
    let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
    let k3 = Tensor::<f64>::zeros(&[1, 3, 3, 3]);
    let err = conv2d(&tape, &x, &k3, None, 1, 1).unwrap_err();
    assert!(err.to_string().contains("3 input channels"), "got: {err}");
    assert!(err.to_string().contains('2'), "got: {err}");

    let keven = Tensor::<f64>::zeros(&[1, 2, 2, 2]);
    assert!(conv2d(&tape, &x, &keven, None, 1, 0).is_err(), "even kernel accepted");

    let k = Tensor::<f64>::zeros(&[1, 2, 3, 3]);
    assert!(conv2d(&tape, &x, &k, None, 0, 1).is_err(), "stride 0 accepted");

    let bad = Tensor::from_vec(vec![f64::NAN; 32], &[1, 2, 4, 4]).unwrap();
    assert!(conv2d(&tape, &bad, &k, None, 1, 1).is_err(), "NaN input accepted");

    let tiny = Tensor::<f64>::zeros(&[1, 2, 2, 2]);
    assert!(conv2d(&tape, &tiny, &k, None, 1, 0).is_err(), "kernel larger than input accepted");
}
