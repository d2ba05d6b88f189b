//! 2-D convolution with zero padding.
//!
//! Forward and both backward products are phrased as saxpy-style loops
//! (`row += a * other_row`) over an im2col buffer: the innermost loop walks a
//! contiguous slice with no reduction reordering, which lets the compiler
//! vectorize it while keeping the element-order of every accumulation fixed.
//! Each output element therefore receives its terms in row-major `(ci, kh,
//! kw)` order on every run — convolution is the dominant cost and also the
//! op whose determinism the training-replay guarantees lean on.

use super::{dims4, Elem, GradSink, Tape, Tensor};
use crate::error::{Error, Result};

/// Geometry of one convolution application.
#[derive(Clone, Copy)]
struct Geom {
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn q(&self) -> usize {
        self.cin * self.k * self.k
    }
    fn s(&self) -> usize {
        self.oh * self.ow
    }
}

/// Writes the im2col matrix of image `xb` (`[cin, h, w]` slice) into `col`,
/// laid out `[q][s]` with `q = (ci, kh, kw)` row-major and `s = (oh, ow)`.
fn im2col<E: Elem>(g: &Geom, xb: &[E], col: &mut [E]) {
    let (h, w, k, st, pad) = (g.h, g.w, g.k, g.stride, g.pad);
    let (oh, ow, s) = (g.oh, g.ow, g.s());
    for ci in 0..g.cin {
        let plane = &xb[ci * h * w..][..h * w];
        for kh in 0..k {
            for kw in 0..k {
                let row = &mut col[((ci * k + kh) * k + kw) * s..][..s];
                for oy in 0..oh {
                    let iy = (oy * st + kh) as isize - pad as isize;
                    let orow = &mut row[oy * ow..][..ow];
                    if iy < 0 || iy >= h as isize {
                        orow.fill(E::zero());
                        continue;
                    }
                    let irow = &plane[iy as usize * w..][..w];
                    for (ox, o) in orow.iter_mut().enumerate() {
                        let ix = (ox * st + kw) as isize - pad as isize;
                        *o = if ix >= 0 && ix < w as isize { irow[ix as usize] } else { E::zero() };
                    }
                }
            }
        }
    }
}

/// Scatters a `[q][s]` column-gradient back onto an input-image gradient.
fn col2im_add<E: Elem>(g: &Geom, col: &[E], gxb: &mut [E]) {
    let (h, w, k, st, pad) = (g.h, g.w, g.k, g.stride, g.pad);
    let (oh, ow, s) = (g.oh, g.ow, g.s());
    for ci in 0..g.cin {
        let plane = &mut gxb[ci * h * w..][..h * w];
        for kh in 0..k {
            for kw in 0..k {
                let row = &col[((ci * k + kh) * k + kw) * s..][..s];
                for oy in 0..oh {
                    let iy = (oy * st + kh) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let irow = &mut plane[iy as usize * w..][..w];
                    let orow = &row[oy * ow..][..ow];
                    for (ox, &v) in orow.iter().enumerate() {
                        let ix = (ox * st + kw) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            irow[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Convolves `x` (`[B, Cin, H, W]`) with `kernel` (`[Cout, Cin, k, k]`) under
/// zero padding. Output spatial size is `(H + 2·pad − k) / stride + 1` per
/// axis. `k` must be odd. Inputs must be finite — a NaN entering the network
/// here would silently poison everything downstream, so it is rejected.
pub fn conv2d<E: Elem>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    kernel: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<E>> {
    let (b, cin, h, w) = dims4("conv2d", x)?;
    let (cout, kcin, kh, kw) = dims4("conv2d", kernel)?;
    if kh != kw {
        return Err(Error::shape("conv2d", format!("kernel must be square, got {kh}x{kw}")));
    }
    let k = kh;
    if k % 2 == 0 {
        return Err(Error::invalid("conv2d", format!("kernel size must be odd, got {k}")));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d", "stride must be at least 1".to_string()));
    }
    if kcin != cin {
        return Err(Error::shape(
            "conv2d",
            format!("kernel expects {kcin} input channels, input has {cin}"),
        ));
    }
    if let Some(bs) = bias {
        if bs.shape() != [cout] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?} does not match {cout} output channels", bs.shape()),
            ));
        }
    }
    if h + 2 * padding < k || w + 2 * padding < k {
        return Err(Error::shape(
            "conv2d",
            format!("input {h}x{w} with padding {padding} is smaller than the {k}x{k} kernel"),
        ));
    }
    if !x.is_finite() || !kernel.is_finite() || bias.is_some_and(|bs| !bs.is_finite()) {
        return Err(Error::non_finite("conv2d", "input, kernel, or bias contains NaN/inf"));
    }

    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (w + 2 * padding - k) / stride + 1;
    let g = Geom { b, cin, h, w, cout, k, stride, pad: padding, oh, ow };
    let (q, s) = (g.q(), g.s());

    let xd = x.data();
    let kd = kernel.data();
    let mut data = vec![E::zero(); b * cout * s];
    // The k=1, stride=1, pad=0 case is common (lateral and classifier convs):
    // the image plane already is the im2col matrix.
    let direct = k == 1 && stride == 1 && padding == 0;
    let mut col = if direct { Vec::new() } else { vec![E::zero(); q * s] };
    for bi in 0..b {
        let xb = &xd[bi * cin * h * w..][..cin * h * w];
        let colref: &[E] = if direct {
            xb
        } else {
            im2col(&g, xb, &mut col);
            &col
        };
        for co in 0..cout {
            let orow = &mut data[(bi * cout + co) * s..][..s];
            if let Some(bs) = bias {
                orow.fill(bs.data()[co]);
            }
            let krow = &kd[co * q..][..q];
            for (qi, &a) in krow.iter().enumerate() {
                let crow = &colref[qi * s..][..s];
                for (o, &c) in orow.iter_mut().zip(crow) {
                    *o += a * c;
                }
            }
        }
    }
    drop(xd);
    drop(kd);

    let rg = x.requires_grad()
        || kernel.requires_grad()
        || bias.is_some_and(|bs| bs.requires_grad());
    let out = Tensor::output(data, vec![b, cout, oh, ow], rg);
    if rg {
        let xc = x.clone();
        let kc = kernel.clone();
        let bc = bias.cloned();
        let mut inputs = vec![x, kernel];
        if let Some(bs) = bias {
            inputs.push(bs);
        }
        tape.record(&inputs, &out, Box::new(move |gout, sink| {
            conv2d_backward(&g, &xc, &kc, bc.as_ref(), gout, sink);
        }));
    }
    Ok(out)
}

fn conv2d_backward<E: Elem>(
    g: &Geom,
    x: &Tensor<E>,
    kernel: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    gout: &[E],
    sink: &mut GradSink<E>,
) {
    let (q, s) = (g.q(), g.s());
    let (b, cin, cout) = (g.b, g.cin, g.cout);
    let plane = g.h * g.w;
    let direct = g.k == 1 && g.stride == 1 && g.pad == 0;
    let xd = x.data();

    if let Some(bs) = bias {
        if bs.requires_grad() {
            let gb = sink.buf(bs);
            for bi in 0..b {
                for co in 0..cout {
                    let orow = &gout[(bi * cout + co) * s..][..s];
                    let mut acc = E::zero();
                    for &v in orow {
                        acc += v;
                    }
                    gb[co] += acc;
                }
            }
        }
    }

    if kernel.requires_grad() {
        // dK[co][q] = Σ_b Σ_s gout[b][co][s] · col_b[q][s]. Transposing the
        // column matrix to [s][q] turns the inner loop into an axpy over q.
        let mut col = if direct { Vec::new() } else { vec![E::zero(); q * s] };
        let mut colt = vec![E::zero(); s * q];
        {
            let gk = sink.buf(kernel);
            for bi in 0..b {
                let xb = &xd[bi * cin * plane..][..cin * plane];
                let colref: &[E] = if direct {
                    xb
                } else {
                    im2col(g, xb, &mut col);
                    &col
                };
                for qi in 0..q {
                    let crow = &colref[qi * s..][..s];
                    for (si, &v) in crow.iter().enumerate() {
                        colt[si * q + qi] = v;
                    }
                }
                for co in 0..cout {
                    let orow = &gout[(bi * cout + co) * s..][..s];
                    let krow = &mut gk[co * q..][..q];
                    for (si, &go) in orow.iter().enumerate() {
                        let trow = &colt[si * q..][..q];
                        for (kv, &t) in krow.iter_mut().zip(trow) {
                            *kv += go * t;
                        }
                    }
                }
            }
        }
    }

    if x.requires_grad() {
        let kd = kernel.data();
        let mut colgrad = vec![E::zero(); q * s];
        let mut gx = vec![E::zero(); b * cin * plane];
        for bi in 0..b {
            colgrad.fill(E::zero());
            for co in 0..cout {
                let orow = &gout[(bi * cout + co) * s..][..s];
                let krow = &kd[co * q..][..q];
                for (qi, &a) in krow.iter().enumerate() {
                    let crow = &mut colgrad[qi * s..][..s];
                    for (c, &o) in crow.iter_mut().zip(orow) {
                        *c += a * o;
                    }
                }
            }
            let gxb = &mut gx[bi * cin * plane..][..cin * plane];
            if direct {
                for (d, &v) in gxb.iter_mut().zip(&colgrad) {
                    *d += v;
                }
            } else {
                col2im_add(g, &colgrad, gxb);
            }
        }
        drop(kd);
        sink.add(x, &gx);
    }
}

#[cfg(test)]
#[path = "conv_tests.rs"]
mod conv_tests;
