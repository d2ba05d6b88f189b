//! Spatial resampling: bilinear upsampling and adaptive average pooling.

use super::{dims4, Elem, Tape, Tensor};
use crate::error::{Error, Result};

/// One axis of a bilinear resize: for each output index, the two source
/// indices and the interpolation weight of the second one.
struct AxisMap {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
}

/// Half-pixel-center source mapping with edge clamping. When `n_out == n_in`
/// every output maps exactly onto its own source pixel, so resizing to the
/// same size is the identity.
fn axis_map(n_in: usize, n_out: usize) -> AxisMap {
    let ratio = n_in as f64 / n_out as f64;
    let mut lo = Vec::with_capacity(n_out);
    let mut hi = Vec::with_capacity(n_out);
    let mut frac = Vec::with_capacity(n_out);
    for i in 0..n_out {
        let src = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n_in - 1) as f64);
        let f = src.floor();
        let l = f as usize;
        let h = (l + 1).min(n_in - 1);
        lo.push(l);
        hi.push(h);
        frac.push(src - f);
    }
    AxisMap { lo, hi, frac }
}

/// Resizes `[B, C, H, W]` to `(out_h, out_w)` by bilinear interpolation with
/// half-pixel centers and edge clamping.
pub fn bilinear_upsample<E: Elem>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<E>> {
    let (b, c, h, w) = dims4("bilinear_upsample", x)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("bilinear_upsample", "output size must be at least 1x1"));
    }
    if h == 0 || w == 0 {
        return Err(Error::shape("bilinear_upsample", "input has an empty spatial axis".to_string()));
    }
    let ym = axis_map(h, out_h);
    let xm = axis_map(w, out_w);

    // Per-output-pixel corner weights, fixed for the whole tensor.
    let xd = x.data();
    let mut data = vec![E::zero(); b * c * out_h * out_w];
    let wy: Vec<E> = ym.frac.iter().map(|&f| E::from_f64(f)).collect();
    let wx: Vec<E> = xm.frac.iter().map(|&f| E::from_f64(f)).collect();
    let one = E::one();
    for plane_idx in 0..b * c {
        let src = &xd[plane_idx * h * w..][..h * w];
        let dst = &mut data[plane_idx * out_h * out_w..][..out_h * out_w];
        for oy in 0..out_h {
            let (y0, y1, fy) = (ym.lo[oy], ym.hi[oy], wy[oy]);
            let r0 = &src[y0 * w..][..w];
            let r1 = &src[y1 * w..][..w];
            let drow = &mut dst[oy * out_w..][..out_w];
            for ox in 0..out_w {
                let (x0, x1, fx) = (xm.lo[ox], xm.hi[ox], wx[ox]);
                let top = r0[x0] * (one - fx) + r0[x1] * fx;
                let bot = r1[x0] * (one - fx) + r1[x1] * fx;
                drow[ox] = top * (one - fy) + bot * fy;
            }
        }
    }
    drop(xd);

    let rg = x.requires_grad();
    let out = Tensor::output(data, vec![b, c, out_h, out_w], rg);
    if rg {
        let xc = x.clone();
        tape.record(&[x], &out, Box::new(move |gout, sink| {
            // Linear op: scatter each output gradient onto its four source
            // corners with the forward weights.
            let gx = sink.buf(&xc);
            for plane_idx in 0..b * c {
                let src = &mut gx[plane_idx * h * w..][..h * w];
                let gdst = &gout[plane_idx * out_h * out_w..][..out_h * out_w];
                for oy in 0..out_h {
                    let (y0, y1, fy) = (ym.lo[oy], ym.hi[oy], wy[oy]);
                    for ox in 0..out_w {
                        let (x0, x1, fx) = (xm.lo[ox], xm.hi[ox], wx[ox]);
                        let g = gdst[oy * out_w + ox];
                        src[y0 * w + x0] += g * (one - fy) * (one - fx);
                        src[y0 * w + x1] += g * (one - fy) * fx;
                        src[y1 * w + x0] += g * fy * (one - fx);
                        src[y1 * w + x1] += g * fy * fx;
                    }
                }
            }
        }));
    }
    Ok(out)
}

/// Pools `[B, C, H, W]` down to `(out_h, out_w)` by averaging. Bin `i` along
/// an axis of length `n` covers `[floor(i·n/out), floor((i+1)·n/out))`, so
/// `out == n` makes this the identity and `out == 1` the global mean.
pub fn adaptive_avg_pool<E: Elem>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<E>> {
    let (b, c, h, w) = dims4("adaptive_avg_pool", x)?;
    if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
        return Err(Error::invalid(
            "adaptive_avg_pool",
            format!("output {out_h}x{out_w} must be between 1x1 and the input {h}x{w}"),
        ));
    }
    let edge = |i: usize, n: usize, out: usize| i * n / out;
    let xd = x.data();
    let mut data = vec![E::zero(); b * c * out_h * out_w];
    for plane_idx in 0..b * c {
        let src = &xd[plane_idx * h * w..][..h * w];
        let dst = &mut data[plane_idx * out_h * out_w..][..out_h * out_w];
        for oy in 0..out_h {
            let (y0, y1) = (edge(oy, h, out_h), edge(oy + 1, h, out_h));
            for ox in 0..out_w {
                let (x0, x1) = (edge(ox, w, out_w), edge(ox + 1, w, out_w));
                let mut acc = E::zero();
                for y in y0..y1 {
                    for xx in x0..x1 {
                        acc += src[y * w + xx];
                    }
                }
                let count = E::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                dst[oy * out_w + ox] = acc / count;
            }
        }
    }
    drop(xd);

    let rg = x.requires_grad();
    let out = Tensor::output(data, vec![b, c, out_h, out_w], rg);
    if rg {
        let xc = x.clone();
        tape.record(&[x], &out, Box::new(move |gout, sink| {
            let gx = sink.buf(&xc);
            for plane_idx in 0..b * c {
                let src = &mut gx[plane_idx * h * w..][..h * w];
                let gdst = &gout[plane_idx * out_h * out_w..][..out_h * out_w];
                for oy in 0..out_h {
                    let (y0, y1) = (edge(oy, h, out_h), edge(oy + 1, h, out_h));
                    for ox in 0..out_w {
                        let (x0, x1) = (edge(ox, w, out_w), edge(ox + 1, w, out_w));
                        let count = E::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                        let g = gdst[oy * out_w + ox] / count;
                        for y in y0..y1 {
                            for xx in x0..x1 {
                                src[y * w + xx] += g;
                            }
                        }
                    }
                }
            }
        }));
    }
    Ok(out)
}

#[cfg(test)]
#[path = "resample_tests.rs"]
mod resample_tests;
