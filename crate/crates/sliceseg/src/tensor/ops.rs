//! Elementwise and structural operations: arithmetic, activations, softmax,
//! reductions, channel concatenation, and the leading-slice views that
//! width-switchable layers are built from.

use super::{dims4, Elem, Tape, Tensor};
use crate::error::{Error, Result};

fn same_shape(op: &'static str, a: &Tensor<impl Elem>, b: &Tensor<impl Elem>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("operands differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// Elementwise `a + b` (shapes must match exactly; no broadcasting).
pub fn add<E: Elem>(tape: &Tape<E>, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x + y).collect();
    let rg = a.requires_grad() || b.requires_grad();
    let out = Tensor::output(data, a.shape().to_vec(), rg);
    if rg {
        let (ac, bc) = (a.clone(), b.clone());
        tape.record(&[a, b], &out, Box::new(move |gout, sink| {
            // d(a+b)/da = d(a+b)/db = 1
            if ac.requires_grad() {
                sink.add(&ac, gout);
            }
            if bc.requires_grad() {
                sink.add(&bc, gout);
            }
        }));
    }
    Ok(out)
}

/// Elementwise `a * b`.
pub fn mul<E: Elem>(tape: &Tape<E>, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x * y).collect();
    let rg = a.requires_grad() || b.requires_grad();
    let out = Tensor::output(data, a.shape().to_vec(), rg);
    if rg {
        let (ac, bc) = (a.clone(), b.clone());
        tape.record(&[a, b], &out, Box::new(move |gout, sink| {
            if ac.requires_grad() {
                let bd = bc.data();
                let ga = sink.buf(&ac);
                for i in 0..gout.len() {
                    ga[i] += gout[i] * bd[i];
                }
            }
            if bc.requires_grad() {
                let ad = ac.data();
                let gb = sink.buf(&bc);
                for i in 0..gout.len() {
                    gb[i] += gout[i] * ad[i];
                }
            }
        }));
    }
    Ok(out)
}

/// `x * c` for a constant `c`.
pub fn scale<E: Elem>(tape: &Tape<E>, x: &Tensor<E>, c: f64) -> Tensor<E> {
    let cv = E::from_f64(c);
    let data = x.data().iter().map(|&v| v * cv).collect();
    let rg = x.requires_grad();
    let out = Tensor::output(data, x.shape().to_vec(), rg);
    if rg {
        let xc = x.clone();
        tape.record(&[x], &out, Box::new(move |gout, sink| {
            let gx = sink.buf(&xc);
            for i in 0..gout.len() {
                gx[i] += gout[i] * cv;
            }
        }));
    }
    out
}

/// `max(x, 0)`. The subgradient at exactly zero is taken as zero.
pub fn relu<E: Elem>(tape: &Tape<E>, x: &Tensor<E>) -> Tensor<E> {
    let zero = E::zero();
    let data: Vec<E> = x.data().iter().map(|&v| if v > zero { v } else { zero }).collect();
    let rg = x.requires_grad();
    let out = Tensor::output(data, x.shape().to_vec(), rg);
    if rg {
        let xc = x.clone();
        tape.record(&[x], &out, Box::new(move |gout, sink| {
            let xd = xc.data();
            let gx = sink.buf(&xc);
            for i in 0..gout.len() {
                if xd[i] > zero {
                    gx[i] += gout[i];
                }
            }
        }));
    }
    out
}

/// Logistic function, computed tail-stably for large `|x|`.
pub fn sigmoid<E: Elem>(tape: &Tape<E>, x: &Tensor<E>) -> Tensor<E> {
    let one = E::one();
    let data: Vec<E> = x
        .data()
        .iter()
        .map(|&v| {
            if v >= E::zero() {
                one / (one + (-v).exp())
            } else {
                let e = v.exp();
                e / (one + e)
            }
        })
        .collect();
    let rg = x.requires_grad();
    let out = Tensor::output(data, x.shape().to_vec(), rg);
    if rg {
        let (xc, oc) = (x.clone(), out.clone());
        tape.record(&[x], &out, Box::new(move |gout, sink| {
            // dσ/dx = σ(x)(1 − σ(x))
            let y = oc.data();
            let gx = sink.buf(&xc);
            for i in 0..gout.len() {
                gx[i] += gout[i] * y[i] * (one - y[i]);
            }
        }));
    }
    out
}

/// Natural logarithm. Every input must be strictly positive.
pub fn log<E: Elem>(tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
    if let Some(&bad) = x.data().iter().find(|v| **v <= E::zero() || !v.is_finite()) {
        return Err(Error::invalid("log", format!("input must be strictly positive, got {bad}")));
    }
    let data = x.data().iter().map(|&v| v.ln()).collect();
    let rg = x.requires_grad();
    let out = Tensor::output(data, x.shape().to_vec(), rg);
    if rg {
        let xc = x.clone();
        tape.record(&[x], &out, Box::new(move |gout, sink| {
            let xd = xc.data();
            let gx = sink.buf(&xc);
            for i in 0..gout.len() {
                gx[i] += gout[i] / xd[i];
            }
        }));
    }
    Ok(out)
}

/// Sum of all elements, as a scalar tensor.
pub fn sum<E: Elem>(tape: &Tape<E>, x: &Tensor<E>) -> Tensor<E> {
    let total: E = x.data().iter().copied().sum();
    let rg = x.requires_grad();
    let out = Tensor::output(vec![total], vec![], rg);
    if rg {
        let xc = x.clone();
        tape.record(&[x], &out, Box::new(move |gout, sink| {
            let g = gout[0];
            let gx = sink.buf(&xc);
            for v in gx.iter_mut() {
                *v += g;
            }
        }));
    }
    out
}

/// Softmax over the channel axis of a `[B, C, H, W]` tensor, with the usual
/// max-subtraction so large logits cannot overflow.
pub fn softmax_channels<E: Elem>(tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
    let (b, c, h, w) = dims4("softmax_channels", x)?;
    if c == 0 {
        return Err(Error::shape("softmax_channels", "channel axis is empty".to_string()));
    }
    let hw = h * w;
    let xd = x.data();
    let mut data = vec![E::zero(); xd.len()];
    for bi in 0..b {
        let base = bi * c * hw;
        for p in 0..hw {
            let mut m = xd[base + p];
            for ci in 1..c {
                let v = xd[base + ci * hw + p];
                if v > m {
                    m = v;
                }
            }
            let mut denom = E::zero();
            for ci in 0..c {
                let e = (xd[base + ci * hw + p] - m).exp();
                data[base + ci * hw + p] = e;
                denom += e;
            }
            for ci in 0..c {
                data[base + ci * hw + p] /= denom;
            }
        }
    }
    drop(xd);
    let rg = x.requires_grad();
    let out = Tensor::output(data, x.shape().to_vec(), rg);
    if rg {
        let (xc, oc) = (x.clone(), out.clone());
        tape.record(&[x], &out, Box::new(move |gout, sink| {
            // ds_i/dx_j = s_i (δ_ij − s_j) ⇒ gx_j = s_j (g_j − Σ_i g_i s_i)
            let y = oc.data();
            let gx = sink.buf(&xc);
            for bi in 0..b {
                let base = bi * c * hw;
                for p in 0..hw {
                    let mut dot = E::zero();
                    for ci in 0..c {
                        let k = base + ci * hw + p;
                        dot += gout[k] * y[k];
                    }
                    for ci in 0..c {
                        let k = base + ci * hw + p;
                        gx[k] += y[k] * (gout[k] - dot);
                    }
                }
            }
        }));
    }
    Ok(out)
}

/// Concatenates `[B, C_i, H, W]` tensors along the channel axis.
pub fn concat_channels<E: Elem>(tape: &Tape<E>, xs: &[&Tensor<E>]) -> Result<Tensor<E>> {
    if xs.is_empty() {
        return Err(Error::shape("concat_channels", "no tensors given".to_string()));
    }
    let (b, _, h, w) = dims4("concat_channels", xs[0])?;
    let mut channels = Vec::with_capacity(xs.len());
    for x in xs {
        let (bi, ci, hi, wi) = dims4("concat_channels", x)?;
        if (bi, hi, wi) != (b, h, w) {
            return Err(Error::shape(
                "concat_channels",
                format!("non-channel dims differ: {:?} vs {:?}", xs[0].shape(), x.shape()),
            ));
        }
        channels.push(ci);
    }
    let c_total: usize = channels.iter().sum();
    let hw = h * w;
    let mut data = vec![E::zero(); b * c_total * hw];
    for bi in 0..b {
        let mut c_off = 0;
        for (x, &ci) in xs.iter().zip(&channels) {
            let xd = x.data();
            let src = &xd[bi * ci * hw..(bi + 1) * ci * hw];
            let dst = &mut data[bi * c_total * hw + c_off * hw..][..ci * hw];
            dst.copy_from_slice(src);
            c_off += ci;
        }
    }
    let rg = xs.iter().any(|x| x.requires_grad());
    let out = Tensor::output(data, vec![b, c_total, h, w], rg);
    if rg {
        let parts: Vec<Tensor<E>> = xs.iter().map(|x| (*x).clone()).collect();
        let chans = channels.clone();
        tape.record(xs, &out, Box::new(move |gout, sink| {
            for bi in 0..b {
                let mut c_off = 0;
                for (x, &ci) in parts.iter().zip(&chans) {
                    if x.requires_grad() {
                        let gx = sink.buf(x);
                        let dst = &mut gx[bi * ci * hw..(bi + 1) * ci * hw];
                        let src = &gout[bi * c_total * hw + c_off * hw..][..ci * hw];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                    c_off += ci;
                }
            }
        }));
    }
    Ok(out)
}

/// Leading slice `[..cout, ..cin, :, :]` of a rank-4 kernel. The backward
/// pass scatters the slice gradient into the matching region of the full
/// kernel and leaves everything outside it exactly zero — this is what makes
/// narrow-width training touch only the parameters the narrow network uses.
pub fn slice_kernel<E: Elem>(
    tape: &Tape<E>,
    kernel: &Tensor<E>,
    cout: usize,
    cin: usize,
) -> Result<Tensor<E>> {
    let (co_full, ci_full, kh, kw) = dims4("slice_kernel", kernel)?;
    if cout == 0 || cout > co_full || cin == 0 || cin > ci_full {
        return Err(Error::shape(
            "slice_kernel",
            format!("slice {cout}x{cin} out of range for kernel {co_full}x{ci_full}"),
        ));
    }
    let kd = kernel.data();
    let ksz = kh * kw;
    let mut data = Vec::with_capacity(cout * cin * ksz);
    for co in 0..cout {
        for ci in 0..cin {
            let src = &kd[(co * ci_full + ci) * ksz..][..ksz];
            data.extend_from_slice(src);
        }
    }
    drop(kd);
    let rg = kernel.requires_grad();
    let out = Tensor::output(data, vec![cout, cin, kh, kw], rg);
    if rg {
        let kc = kernel.clone();
        tape.record(&[kernel], &out, Box::new(move |gout, sink| {
            let gk = sink.buf(&kc);
            for co in 0..cout {
                for ci in 0..cin {
                    let dst = &mut gk[(co * ci_full + ci) * ksz..][..ksz];
                    let src = &gout[(co * cin + ci) * ksz..][..ksz];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }));
    }
    Ok(out)
}

/// Leading slice `[..n]` of a rank-1 tensor (bias vectors, BN parameters).
pub fn slice_vec<E: Elem>(tape: &Tape<E>, v: &Tensor<E>, n: usize) -> Result<Tensor<E>> {
    if v.shape().len() != 1 {
        return Err(Error::shape(
            "slice_vec",
            format!("expected a rank-1 tensor, got shape {:?}", v.shape()),
        ));
    }
    let full = v.shape()[0];
    if n == 0 || n > full {
        return Err(Error::shape("slice_vec", format!("slice {n} out of range for length {full}")));
    }
    let data = v.data()[..n].to_vec();
    let rg = v.requires_grad();
    let out = Tensor::output(data, vec![n], rg);
    if rg {
        let vc = v.clone();
        tape.record(&[v], &out, Box::new(move |gout, sink| {
            let gv = sink.buf(&vc);
            for (d, &s) in gv[..n].iter_mut().zip(gout) {
                *d += s;
            }
        }));
    }
    Ok(out)
}

#[cfg(test)]
#[path = "ops_tests.rs"]
mod ops_tests;
