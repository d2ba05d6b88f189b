//! Elementwise/structural op values and gradients.

use super::*;
use crate::tensor::{backward, grad_check, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn rand_vec(rng: &mut ChaCha20Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

#[test]
fn add_and_mul_values_and_shape_errors() {
    let tape = Tape::new();
    let a = Tensor::from_vec(vec![1.0f64, 2.0, 3.0], &[3]).unwrap();
    let b = Tensor::from_vec(vec![10.0f64, 20.0, 30.0], &[3]).unwrap();
    assert_eq!(add(&tape, &a, &b).unwrap().to_vec(), vec![11.0, 22.0, 33.0]);
    assert_eq!(mul(&tape, &a, &b).unwrap().to_vec(), vec![10.0, 40.0, 90.0]);

    let c = Tensor::<f64>::zeros(&[2]);
    assert!(add(&tape, &a, &c).is_err());
    assert!(mul(&tape, &a, &c).is_err());
}

#[test]
fn scale_by_zero_and_identity() {
    let tape = Tape::new();
    let a = Tensor::from_vec(vec![1.5f64, -2.0], &[2]).unwrap();
    assert_eq!(scale(&tape, &a, 0.0).to_vec(), vec![0.0, -0.0]);
    assert_eq!(scale(&tape, &a, 1.0).to_vec(), vec![1.5, -2.0]);
    assert_eq!(scale(&tape, &a, -3.0).to_vec(), vec![-4.5, 6.0]);
}

#[test]
fn relu_clamps_and_kills_gradient_below_zero() {
    let tape = Tape::new();
    let x = Tensor::param(vec![-2.0f64, 0.0, 3.0], &[3]).unwrap();
    let y = relu(&tape, &x);
    assert_eq!(y.to_vec(), vec![0.0, 0.0, 3.0]);
    let loss = sum(&tape, &y);
    backward(&tape, &loss).unwrap();
    assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 1.0]);
}

#[test]
fn sigmoid_midpoint_and_saturation() {
    let tape = Tape::new();
    let x = Tensor::param(vec![0.0f64, 100.0, -100.0], &[3]).unwrap();
    let y = sigmoid(&tape, &x);
    let v = y.to_vec();
    assert_eq!(v[0], 0.5);
    assert!(v[1] > 1.0 - 1e-12 && v[1] <= 1.0);
    assert!(v[2] < 1e-12 && v[2] >= 0.0 && v[2].is_finite());

    // dσ/dx at 0 is exactly 1/4.
    let loss = sum(&tape, &y);
    backward(&tape, &loss).unwrap();
    assert_eq!(x.grad().unwrap()[0], 0.25);
}

#[test]
fn log_values_and_domain_errors() {
    let tape = Tape::new();
    let x = Tensor::from_vec(vec![1.0f64, std::f64::consts::E], &[2]).unwrap();
    let y = log(&tape, &x).unwrap().to_vec();
    assert_eq!(y[0], 0.0);
    assert!((y[1] - 1.0).abs() < 1e-15);

    for bad in [0.0f64, -1.0, f64::NAN] {
        let t = Tensor::from_vec(vec![1.0, bad], &[2]).unwrap();
        assert!(log(&tape, &t).is_err(), "log accepted {bad}");
    }
}

#[test]
fn softmax_uniform_known_values_and_shift_invariance() {
    let tape = Tape::new();
    // Equal logits → uniform.
    let x = Tensor::from_vec(vec![2.0f64; 4], &[1, 4, 1, 1]).unwrap();
    let y = softmax_channels(&tape, &x).unwrap();
    for &v in y.data().iter() {
        assert!((v - 0.25).abs() < 1e-15);
    }

    // Logits (0, ln 3) → probabilities (1/4, 3/4).
    let x = Tensor::from_vec(vec![0.0f64, 3.0f64.ln()], &[1, 2, 1, 1]).unwrap();
    let y = softmax_channels(&tape, &x).unwrap().to_vec();
    assert!((y[0] - 0.25).abs() < 1e-15 && (y[1] - 0.75).abs() < 1e-15);

    // Adding a huge constant to every logit changes nothing and overflows
    // nothing, thanks to max subtraction.
    let a = Tensor::from_vec(vec![0.3f64, -1.2, 2.0], &[1, 3, 1, 1]).unwrap();
    let b = Tensor::from_vec(vec![1000.3f64, 999.8 - 1.0, 1002.0], &[1, 3, 1, 1]).unwrap();
    let ya = softmax_channels(&tape, &a).unwrap().to_vec();
    let yb = softmax_channels(&tape, &b).unwrap().to_vec();
    for (u, v) in ya.iter().zip(&yb) {
        assert!((u - v).abs() < 1e-12, "{u} vs {v}");
    }
}

#[test]
fn softmax_channels_sum_to_one_on_random_batches() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let tape = Tape::new();
    for _ in 0..50 {
        let b = rng.gen_range(1..3);
        let c = rng.gen_range(2..7);
        let h = rng.gen_range(1..5);
        let w = rng.gen_range(1..5);
        let x =
            Tensor::from_vec(rand_vec(&mut rng, b * c * h * w, -30.0, 30.0), &[b, c, h, w])
                .unwrap();
        let y = softmax_channels(&tape, &x).unwrap();
        let yd = y.data();
        for bi in 0..b {
            for p in 0..h * w {
                let s: f64 = (0..c).map(|ci| yd[(bi * c + ci) * h * w + p]).sum();
                assert!((s - 1.0).abs() < 1e-12, "pixel sums to {s}");
            }
        }
    }
}

#[test]
fn concat_channels_values_and_split_gradient() {
    let tape = Tape::new();
    let a = Tensor::param(vec![1.0f64, 2.0, 3.0, 4.0], &[1, 1, 2, 2]).unwrap();
    let b = Tensor::param(vec![10.0f64, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0], &[1, 2, 2, 2])
        .unwrap();
    let y = concat_channels(&tape, &[&a, &b]).unwrap();
    assert_eq!(y.shape(), &[1, 3, 2, 2]);
    assert_eq!(y.to_vec()[..4], [1.0, 2.0, 3.0, 4.0]);
    assert_eq!(y.to_vec()[4..], [10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0]);

    let loss = sum(&tape, &scale(&tape, &y, 2.0));
    backward(&tape, &loss).unwrap();
    assert_eq!(a.grad().unwrap(), vec![2.0; 4]);
    assert_eq!(b.grad().unwrap(), vec![2.0; 8]);

    let c = Tensor::<f64>::zeros(&[1, 1, 3, 2]);
    assert!(concat_channels(&tape, &[&a, &c]).is_err(), "mismatched spatial dims accepted");
}

#[test]
fn slice_kernel_takes_leading_block_and_scatters_gradients() {
    let tape = Tape::new();
    // kernel [2, 2, 1, 1] = [[1, 2], [3, 4]] over (cout, cin).
    let k = Tensor::param(vec![1.0f64, 2.0, 3.0, 4.0], &[2, 2, 1, 1]).unwrap();
    let s = slice_kernel(&tape, &k, 1, 1).unwrap();
    assert_eq!(s.shape(), &[1, 1, 1, 1]);
    assert_eq!(s.to_vec(), vec![1.0]);

    let loss = sum(&tape, &s);
    backward(&tape, &loss).unwrap();
    // Gradient lands in the sliced region only; the rest stays exactly zero.
    assert_eq!(k.grad().unwrap(), vec![1.0, 0.0, 0.0, 0.0]);

    assert!(slice_kernel(&tape, &k, 3, 1).is_err());
    assert!(slice_kernel(&tape, &k, 0, 1).is_err());
}

#[test]
fn slice_vec_takes_prefix() {
    let tape = Tape::new();
    let v = Tensor::param(vec![5.0f64, 6.0, 7.0], &[3]).unwrap();
    let s = slice_vec(&tape, &v, 2).unwrap();
    assert_eq!(s.to_vec(), vec![5.0, 6.0]);
    let loss = sum(&tape, &s);
    backward(&tape, &loss).unwrap();
    assert_eq!(v.grad().unwrap(), vec![1.0, 1.0, 0.0]);
    assert!(slice_vec(&tape, &v, 4).is_err());
}

#[test]
fn elementwise_ops_pass_finite_difference_checks() {
    let mut rng = ChaCha20Rng::seed_from_u64(23);
    for round in 0..20 {
        let n = rng.gen_range(2..12);
        let xv = rand_vec(&mut rng, n, -2.0, 2.0);
        let yv = rand_vec(&mut rng, n, -2.0, 2.0);
        // Keep relu inputs away from its kink and log inputs positive.
        let xr: Vec<f64> =
            xv.iter().map(|v| if v.abs() < 0.05 { v + 0.1 } else { *v }).collect();
        let lg: Vec<f64> = xv.iter().map(|v| v.abs() + 0.2).collect();

        let x = Tensor::param(xr, &[n]).unwrap();
        let y = Tensor::param(yv, &[n]).unwrap();
        let l = Tensor::param(lg, &[n]).unwrap();
        let w = Tensor::from_vec(rand_vec(&mut rng, n, -1.0, 1.0), &[n]).unwrap();

        let report = grad_check(
            |tape| {
                // Mixes every elementwise op into one scalar.
                let r = relu(tape, &x);
                let s = sigmoid(tape, &y);
                let lgt = log(tape, &l)?;
                let m = mul(tape, &r, &s)?;
                let a = add(tape, &m, &lgt)?;
                let sc = scale(tape, &a, 0.7);
                Ok(sum(tape, &mul(tape, &sc, &w)?))
            },
            &[x.clone(), y.clone(), l.clone()],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "round {round}: max rel err {}", report.max_rel_err);
    }
}

#[test]
fn softmax_and_structure_ops_pass_finite_difference_checks() {
    let mut rng = ChaCha20Rng::seed_from_u64(37);
    for round in 0..20 {
        let b = rng.gen_range(1..3);
        let c = rng.gen_range(2..5);
        let c2 = rng.gen_range(1..4);
        let h = rng.gen_range(1..4);
        let w = rng.gen_range(1..4);
        let x =
            Tensor::param(rand_vec(&mut rng, b * c * h * w, -3.0, 3.0), &[b, c, h, w]).unwrap();
        let y =
            Tensor::param(rand_vec(&mut rng, b * c2 * h * w, -3.0, 3.0), &[b, c2, h, w]).unwrap();
        let wt = Tensor::from_vec(rand_vec(&mut rng, b * (c + c2) * h * w, -1.0, 1.0), &[
            b,
            c + c2,
            h,
            w,
        ])
        .unwrap();
        let kco = rng.gen_range(1..3);
        let kci = rng.gen_range(1..3);
        let k = Tensor::param(rand_vec(&mut rng, 3 * 2 * 9, -1.0, 1.0), &[3, 2, 3, 3]).unwrap();

        let report = grad_check(
            |tape| {
                let sm = softmax_channels(tape, &x)?;
                let cat = concat_channels(tape, &[&sm, &y])?;
                let weighted = mul(tape, &cat, &wt)?;
                let a = sum(tape, &weighted);
                let ks = slice_kernel(tape, &k, kco, kci)?;
                let b = sum(tape, &ks);
                add(tape, &a, &b)
            },
            &[x.clone(), y.clone(), k.clone()],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "round {round}: max rel err {}", report.max_rel_err);
    }
}
