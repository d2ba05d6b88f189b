//! Batch normalization over `[B, C, H, W]` tensors.

use super::{dims4, Elem, Tape, Tensor};
use crate::error::{Error, Result};

/// Whether a forward pass is a training step (batch statistics, running-stat
/// updates, dropout-style behaviors) or inference (frozen statistics).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    Train,
    Eval,
}

/// Normalizes each channel of `x`, scales by `gamma` and shifts by `beta`.
///
/// In [`Mode::Train`] the per-channel mean and *biased* variance of the
/// current batch are used, and the running statistics are updated in place:
/// `running ← (1 − momentum) · running + momentum · batch`. In [`Mode::Eval`]
/// the stored running statistics normalize instead, which makes the op a
/// per-channel affine map. `stats_initialized` tells the op whether
/// `running_mean` / `running_var` hold real data yet; evaluating with
/// uninitialized statistics is an error (the caller owns the flag, since the
/// tensors themselves cannot distinguish "never written" from "trained to
/// exactly zero mean").
#[allow(clippy::too_many_arguments)]
pub fn batch_norm2d<E: Elem>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    running_mean: &Tensor<E>,
    running_var: &Tensor<E>,
    mode: Mode,
    momentum: f64,
    eps: f64,
    stats_initialized: bool,
) -> Result<Tensor<E>> {
    let (b, c, h, w) = dims4("batch_norm2d", x)?;
    for (name, t) in [
        ("gamma", gamma),
        ("beta", beta),
        ("running_mean", running_mean),
        ("running_var", running_var),
    ] {
        if t.shape() != [c] {
            return Err(Error::shape(
                "batch_norm2d",
                format!("{name} shape {:?} does not match {c} channels", t.shape()),
            ));
        }
    }
    let m = b * h * w;
    let plane = h * w;
    let eps_e = E::from_f64(eps);

    match mode {
        Mode::Train => {
            if m < 2 {
                return Err(Error::invalid(
                    "batch_norm2d",
                    format!("train mode needs at least 2 values per channel, got {m}"),
                ));
            }
            let xd = x.data();
            let mut mean = vec![E::zero(); c];
            let mut var = vec![E::zero(); c];
            let minv = E::from_f64(1.0 / m as f64);
            for ci in 0..c {
                let mut acc = E::zero();
                for bi in 0..b {
                    let row = &xd[(bi * c + ci) * plane..][..plane];
                    for &v in row {
                        acc += v;
                    }
                }
                let mu = acc * minv;
                let mut vacc = E::zero();
                for bi in 0..b {
                    let row = &xd[(bi * c + ci) * plane..][..plane];
                    for &v in row {
                        let d = v - mu;
                        vacc += d * d;
                    }
                }
                mean[ci] = mu;
                var[ci] = vacc * minv;
            }

            // Update the running statistics in place (they are buffers, not
            // graph nodes, so this never touches the tape).
            {
                let mom = E::from_f64(momentum);
                let keep = E::one() - mom;
                let mut rm = running_mean.data_mut();
                let mut rv = running_var.data_mut();
                for ci in 0..c {
                    rm[ci] = keep * rm[ci] + mom * mean[ci];
                    rv[ci] = keep * rv[ci] + mom * var[ci];
                }
            }

            let gd = gamma.data();
            let bd = beta.data();
            let mut data = vec![E::zero(); xd.len()];
            let mut inv_std = vec![E::zero(); c];
            for ci in 0..c {
                inv_std[ci] = E::one() / (var[ci] + eps_e).sqrt();
            }
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * plane;
                    let (mu, is, ga, be) = (mean[ci], inv_std[ci], gd[ci], bd[ci]);
                    for p in 0..plane {
                        data[base + p] = (xd[base + p] - mu) * is * ga + be;
                    }
                }
            }
            drop(xd);
            drop(gd);
            drop(bd);

            let rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
            let out = Tensor::output(data, x.shape().to_vec(), rg);
            if rg {
                let (xc, gc, bc) = (x.clone(), gamma.clone(), beta.clone());
                tape.record(&[x, gamma, beta], &out, Box::new(move |gout, sink| {
                    batch_norm_train_backward(
                        &xc, &gc, &bc, &mean, &inv_std, b, c, plane, gout, sink,
                    );
                }));
            }
            Ok(out)
        }
        Mode::Eval => {
            if !stats_initialized {
                return Err(Error::invalid(
                    "batch_norm2d",
                    "eval mode with uninitialized running statistics; train this width first"
                        .to_string(),
                ));
            }
            let xd = x.data();
            let gd = gamma.data();
            let bd = beta.data();
            let rm = running_mean.data();
            let rv = running_var.data();
            let mut scale = vec![E::zero(); c];
            let mut shift = vec![E::zero(); c];
            for ci in 0..c {
                let is = E::one() / (rv[ci] + eps_e).sqrt();
                scale[ci] = gd[ci] * is;
                shift[ci] = bd[ci] - rm[ci] * gd[ci] * is;
            }
            let mut data = vec![E::zero(); xd.len()];
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * plane;
                    let (sc, sh) = (scale[ci], shift[ci]);
                    for p in 0..plane {
                        data[base + p] = xd[base + p] * sc + sh;
                    }
                }
            }
            drop(xd);
            drop(gd);
            drop(bd);

            let rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
            let out = Tensor::output(data, x.shape().to_vec(), rg);
            if rg {
                let (xc, gc, bc) = (x.clone(), gamma.clone(), beta.clone());
                let rm_v = rm.clone();
                let inv_std: Vec<E> =
                    rv.iter().map(|&v| E::one() / (v + eps_e).sqrt()).collect();
                drop(rm);
                drop(rv);
                tape.record(&[x, gamma, beta], &out, Box::new(move |gout, sink| {
                    // Eval BN is affine: y = (x − rm)·is·γ + β.
                    let gd = gc.data();
                    if xc.requires_grad() {
                        let gx = sink.buf(&xc);
                        for bi in 0..b {
                            for ci in 0..c {
                                let base = (bi * c + ci) * plane;
                                let a = gd[ci] * inv_std[ci];
                                for p in 0..plane {
                                    gx[base + p] += gout[base + p] * a;
                                }
                            }
                        }
                    }
                    drop(gd);
                    if gc.requires_grad() || bc.requires_grad() {
                        let xd = xc.data();
                        for ci in 0..c {
                            let mut dg = E::zero();
                            let mut db = E::zero();
                            for bi in 0..b {
                                let base = (bi * c + ci) * plane;
                                for p in 0..plane {
                                    let xhat = (xd[base + p] - rm_v[ci]) * inv_std[ci];
                                    dg += gout[base + p] * xhat;
                                    db += gout[base + p];
                                }
                            }
                            if gc.requires_grad() {
                                sink.buf(&gc)[ci] += dg;
                            }
                            if bc.requires_grad() {
                                sink.buf(&bc)[ci] += db;
                            }
                        }
                    }
                }));
            }
            Ok(out)
        }
    }
}

/// Standard train-mode BN backward. With `x̂ = (x − μ)·is` and per-channel
/// reductions over the `m = B·H·W` batch elements:
///   dγ = Σ g·x̂,  dβ = Σ g,
///   dx = is/m · (m·g·γ − Σ(g·γ) − x̂·Σ(g·γ·x̂))
#[allow(clippy::too_many_arguments)]
fn batch_norm_train_backward<E: Elem>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    mean: &[E],
    inv_std: &[E],
    b: usize,
    c: usize,
    plane: usize,
    gout: &[E],
    sink: &mut super::GradSink<E>,
) {
    let xd = x.data();
    let gd = gamma.data();
    let m = E::from_f64((b * plane) as f64);
    let minv = E::one() / m;

    for ci in 0..c {
        let (mu, is, ga) = (mean[ci], inv_std[ci], gd[ci]);
        let mut sum_g = E::zero();
        let mut sum_gx = E::zero();
        for bi in 0..b {
            let base = (bi * c + ci) * plane;
            for p in 0..plane {
                let g = gout[base + p];
                let xhat = (xd[base + p] - mu) * is;
                sum_g += g;
                sum_gx += g * xhat;
            }
        }
        if gamma.requires_grad() {
            sink.buf(gamma)[ci] += sum_gx;
        }
        if beta.requires_grad() {
            sink.buf(beta)[ci] += sum_g;
        }
        if x.requires_grad() {
            let gx = sink.buf(x);
            for bi in 0..b {
                let base = (bi * c + ci) * plane;
                for p in 0..plane {
                    let g = gout[base + p];
                    let xhat = (xd[base + p] - mu) * is;
                    gx[base + p] += is * ga * (g - minv * sum_g - xhat * minv * sum_gx);
                }
            }
        }
    }
}

#[cfg(test)]
#[path = "norm_tests.rs"]
mod norm_tests;
