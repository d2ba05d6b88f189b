//! Batch-norm values, running-statistic updates, and gradients.

use super::*;
use crate::tensor::ops::{mul, sum};
use crate::tensor::{grad_check, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

struct Bn {
    gamma: Tensor<f64>,
    beta: Tensor<f64>,
    rm: Tensor<f64>,
    rv: Tensor<f64>,
}

fn bn_identity_params(c: usize) -> Bn {
    Bn {
        gamma: Tensor::from_vec(vec![1.0; c], &[c]).unwrap(),
        beta: Tensor::from_vec(vec![0.0; c], &[c]).unwrap(),
        rm: Tensor::from_vec(vec![0.0; c], &[c]).unwrap(),
        rv: Tensor::from_vec(vec![1.0; c], &[c]).unwrap(),
    }
}

#[test]
fn constant_input_normalizes_to_beta() {
    let tape = Tape::new();
    let x = Tensor::from_vec(vec![7.5; 2 * 3 * 2 * 2], &[2, 3, 2, 2]).unwrap();
    let p = bn_identity_params(3);
    let beta = Tensor::from_vec(vec![0.25, -1.0, 2.0], &[3]).unwrap();
    let y = batch_norm2d(&tape, &x, &p.gamma, &beta, &p.rm, &p.rv, Mode::Train, 0.1, 1e-5, false)
        .unwrap();
    let yd = y.to_vec();
    // Zero batch variance → x̂ = 0 → output is exactly beta per channel.
    for bi in 0..2 {
        for (ci, want) in [0.25, -1.0, 2.0].iter().enumerate() {
            for p in 0..4 {
                assert_eq!(yd[(bi * 3 + ci) * 4 + p], *want);
            }
        }
    }
}

#[test]
fn two_point_batch_standardizes_to_unit_values() {
    let tape = Tape::new();
    // One channel, values {1, 3}: mean 2, biased variance 1 → x̂ = {−1, +1}.
    let x = Tensor::from_vec(vec![1.0, 3.0], &[2, 1, 1, 1]).unwrap();
    let p = bn_identity_params(1);
    let y =
        batch_norm2d(&tape, &x, &p.gamma, &p.beta, &p.rm, &p.rv, Mode::Train, 0.1, 1e-12, false)
            .unwrap()
            .to_vec();
    assert!((y[0] + 1.0).abs() < 1e-9, "{}", y[0]);
    assert!((y[1] - 1.0).abs() < 1e-9, "{}", y[1]);
}

#[test]
fn running_stats_update_with_momentum() {
    let tape = Tape::new();
    let x = Tensor::from_vec(vec![1.0, 3.0], &[2, 1, 1, 1]).unwrap();
    let p = bn_identity_params(1);
    // Seed running stats away from the defaults to see the blend.
    p.rm.data_mut()[0] = 10.0;
    p.rv.data_mut()[0] = 4.0;
    batch_norm2d(&tape, &x, &p.gamma, &p.beta, &p.rm, &p.rv, Mode::Train, 0.1, 1e-5, true)
        .unwrap();
    // running ← 0.9·running + 0.1·batch, with batch mean 2 and biased var 1.
    assert!((p.rm.data()[0] - (0.9 * 10.0 + 0.1 * 2.0)).abs() < 1e-12);
    assert!((p.rv.data()[0] - (0.9 * 4.0 + 0.1 * 1.0)).abs() < 1e-12);
}

#[test]
fn eval_mode_with_unit_stats_is_identity() {
    let tape = Tape::new();
    let vals = vec![0.5, -2.0, 3.25, 1.0];
    let x = Tensor::from_vec(vals.clone(), &[1, 1, 2, 2]).unwrap();
    let p = bn_identity_params(1);
    let y = batch_norm2d(&tape, &x, &p.gamma, &p.beta, &p.rm, &p.rv, Mode::Eval, 0.1, 0.0, true)
        .unwrap();
    assert_eq!(y.to_vec(), vals);
}

#[test]
fn eval_mode_requires_initialized_stats() {
    let tape = Tape::new();
    let x = Tensor::from_vec(vec![1.0; 4], &[1, 1, 2, 2]).unwrap();
    let p = bn_identity_params(1);
    let err =
        batch_norm2d(&tape, &x, &p.gamma, &p.beta, &p.rm, &p.rv, Mode::Eval, 0.1, 1e-5, false)
            .unwrap_err();
    assert!(err.to_string().contains("uninitialized"), "got: {err}");
}

#[test]
fn train_mode_needs_two_values_per_channel() {
    let tape = Tape::new();
    let x = Tensor::from_vec(vec![1.0], &[1, 1, 1, 1]).unwrap();
    let p = bn_identity_params(1);
    assert!(batch_norm2d(&tape, &x, &p.gamma, &p.beta, &p.rm, &p.rv, Mode::Train, 0.1, 1e-5, false)
        .is_err());
}

#[test]
fn train_and_eval_gradients_pass_finite_difference_checks() {
    let mut rng = ChaCha20Rng::seed_from_u64(41);
    for round in 0..20 {
        let b = rng.gen_range(2..4);
        let c = rng.gen_range(1..4);
        let h = rng.gen_range(1..4);
        let w = rng.gen_range(2..4);
        let n = b * c * h * w;
        let xv: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = Tensor::param(xv, &[b, c, h, w]).unwrap();
        let gamma =
            Tensor::param((0..c).map(|_| rng.gen_range(0.5..1.5)).collect(), &[c]).unwrap();
        let beta =
            Tensor::param((0..c).map(|_| rng.gen_range(-0.5..0.5)).collect(), &[c]).unwrap();
        let rm = Tensor::from_vec((0..c).map(|_| rng.gen_range(-0.5..0.5)).collect(), &[c])
            .unwrap();
        let rv = Tensor::from_vec((0..c).map(|_| rng.gen_range(0.5..2.0)).collect(), &[c])
            .unwrap();
        let wt =
            Tensor::from_vec((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), &[b, c, h, w])
                .unwrap();
        let mode = if round % 2 == 0 { Mode::Train } else { Mode::Eval };

        let report = grad_check(
            |tape| {
                // Fresh running-stat copies per call: train mode mutates them,
                // and finite differencing needs a side-effect-free closure.
                let rm_c = Tensor::from_vec(rm.to_vec(), &[c]).unwrap();
                let rv_c = Tensor::from_vec(rv.to_vec(), &[c]).unwrap();
                let y = batch_norm2d(
                    tape, &x, &gamma, &beta, &rm_c, &rv_c, mode, 0.1, 1e-5, true,
                )?;
                Ok(sum(tape, &mul(tape, &y, &wt)?))
            },
            &[x.clone(), gamma.clone(), beta.clone()],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(
            report.passed,
            "round {round} ({mode:?}): max rel err {}",
            report.max_rel_err
        );
    }
}
