//! Softmax and layer normalization.

use alloc::boxed::Box;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use super::axis_split;
use crate::autodiff::scalar::Real;
use crate::autodiff::tape::{finite_or_err, require_same_tape, GradBuf, Var};
use crate::error::{CoreError, Result};

/// Numerically stable softmax along `axis`.
pub fn softmax<'t, F: Real>(x: Var<'t, F>, axis: usize) -> Result<Var<'t, F>> {
    let xs = x.shape();
    if axis >= xs.len() {
        return Err(CoreError::invalid("softmax", "axis out of range"));
    }
    let (outer, alen, inner) = axis_split(&xs, axis);
    let xd = x.data();
    let mut out = vec![F::zero(); xd.len()];
    if inner == 1 {
        // Contiguous rows (softmax over the trailing axis).
        for (orow, xrow) in out.chunks_exact_mut(alen).zip(xd.chunks_exact(alen)) {
            let mut mx = xrow[0];
            for &v in &xrow[1..] {
                if v > mx {
                    mx = v;
                }
            }
            let mut denom = F::zero();
            for (o, &v) in orow.iter_mut().zip(xrow) {
                let e = (v - mx).exp();
                *o = e;
                denom = denom + e;
            }
            for o in orow.iter_mut() {
                *o = *o / denom;
            }
        }
    } else {
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * alen + a) * inner + i;
                let mut mx = xd[at(0)];
                for a in 1..alen {
                    if xd[at(a)] > mx {
                        mx = xd[at(a)];
                    }
                }
                let mut denom = F::zero();
                for a in 0..alen {
                    let e = (xd[at(a)] - mx).exp();
                    out[at(a)] = e;
                    denom = denom + e;
                }
                for a in 0..alen {
                    out[at(a)] = out[at(a)] / denom;
                }
            }
        }
    }
    finite_or_err("softmax", x.tape(), &out)?;
    let out = Rc::new(out);
    let needs = x.needs_grad();
    let back = needs.then(|| {
        let (xi, n) = (x.index(), xd.len());
        let yd = Rc::clone(&out);
        Box::new(move |g: &[F], sink: &mut GradBuf<'_, F>| {
            let buf = sink.buf(xi, n);
            if inner == 1 {
                for ((brow, grow), yrow) in buf
                    .chunks_exact_mut(alen)
                    .zip(g.chunks_exact(alen))
                    .zip(yd.chunks_exact(alen))
                {
                    let mut dot = F::zero();
                    for (&gv, &yv) in grow.iter().zip(yrow) {
                        dot = dot + gv * yv;
                    }
                    for ((b, &gv), &yv) in brow.iter_mut().zip(grow).zip(yrow) {
                        *b = *b + yv * (gv - dot);
                    }
                }
            } else {
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |a: usize| (o * alen + a) * inner + i;
                        let mut dot = F::zero();
                        for a in 0..alen {
                            dot = dot + g[at(a)] * yd[at(a)];
                        }
                        for a in 0..alen {
                            let p = at(a);
                            buf[p] = buf[p] + yd[p] * (g[p] - dot);
                        }
                    }
                }
            }
        }) as Box<dyn Fn(&[F], &mut GradBuf<'_, F>)>
    });
    Ok(x.tape().push(xs, out, needs, back))
}

/// Layer normalization over the trailing axis of `x (..., D)` with learnable
/// `gamma (D)` and `beta (D)`.
pub fn layernorm<'t, F: Real>(
    x: Var<'t, F>,
    gamma: Var<'t, F>,
    beta: Var<'t, F>,
    eps: F,
) -> Result<Var<'t, F>> {
    require_same_tape("layernorm", x, gamma)?;
    require_same_tape("layernorm", x, beta)?;
    let xs = x.shape();
    let d = *xs.last().ok_or_else(|| {
        CoreError::invalid("layernorm", "input must have at least one axis")
    })?;
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(CoreError::ShapeMismatch {
            op: "layernorm",
            lhs: xs,
            rhs: gamma.shape(),
        });
    }
    ln_rows("layernorm", x, gamma, beta, eps, x.len() / d, d, 1, xs)
}

/// Layer normalization over the channel axis of `x (B, C, H, W)`; the
/// per-position norm used by the conv extractor.
pub fn layernorm_chan<'t, F: Real>(
    x: Var<'t, F>,
    gamma: Var<'t, F>,
    beta: Var<'t, F>,
    eps: F,
) -> Result<Var<'t, F>> {
    require_same_tape("layernorm_chan", x, gamma)?;
    require_same_tape("layernorm_chan", x, beta)?;
    let xs = x.shape();
    if xs.len() != 4 {
        return Err(CoreError::invalid("layernorm_chan", "expected 4-D input"));
    }
    let c = xs[1];
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(CoreError::ShapeMismatch {
            op: "layernorm_chan",
            lhs: xs,
            rhs: gamma.shape(),
        });
    }
    // Rows are (b, h, w) positions; elements stride by H*W through channels.
    let hw = xs[2] * xs[3];
    ln_strided("layernorm_chan", x, gamma, beta, eps, xs[0], c, hw, xs)
}

/// Shared LN kernel for contiguous rows (`stride == 1`).
#[allow(clippy::too_many_arguments)]
fn ln_rows<'t, F: Real>(
    op: &'static str,
    x: Var<'t, F>,
    gamma: Var<'t, F>,
    beta: Var<'t, F>,
    eps: F,
    rows: usize,
    d: usize,
    _stride: usize,
    oshape: Vec<usize>,
) -> Result<Var<'t, F>> {
    let (xd, gd, bd) = (x.data(), gamma.data(), beta.data());
    let inv_d = F::one() / F::from_usize_(d);
    let mut out = vec![F::zero(); xd.len()];
    let mut xhat = vec![F::zero(); xd.len()];
    let mut inv_std = vec![F::zero(); rows];
    for r in 0..rows {
        let xrow = &xd[r * d..(r + 1) * d];
        let mut mean = F::zero();
        for &v in xrow {
            mean = mean + v;
        }
        mean = mean * inv_d;
        let mut var = F::zero();
        for &v in xrow {
            let c = v - mean;
            var = var + c * c;
        }
        var = var * inv_d;
        let istd = F::one() / (var + eps).sqrt();
        inv_std[r] = istd;
        for i in 0..d {
            let xh = (xrow[i] - mean) * istd;
            xhat[r * d + i] = xh;
            out[r * d + i] = gd[i] * xh + bd[i];
        }
    }
    finite_or_err(op, x.tape(), &out)?;
    let needs = x.needs_grad() || gamma.needs_grad() || beta.needs_grad();
    let back = needs.then(|| {
        let (xi, gi, bi) = (x.index(), gamma.index(), beta.index());
        let (xn, gn, bn) = (x.needs_grad(), gamma.needs_grad(), beta.needs_grad());
        let n = xd.len();
        let gd = Rc::clone(&gd);
        let xhat = Rc::new(xhat);
        let inv_std = Rc::new(inv_std);
        Box::new(move |g: &[F], sink: &mut GradBuf<'_, F>| {
            if gn {
                let buf = sink.buf(gi, d);
                for r in 0..rows {
                    for i in 0..d {
                        buf[i] = buf[i] + g[r * d + i] * xhat[r * d + i];
                    }
                }
            }
            if bn {
                let buf = sink.buf(bi, d);
                for r in 0..rows {
                    for i in 0..d {
                        buf[i] = buf[i] + g[r * d + i];
                    }
                }
            }
            if xn {
                let buf = sink.buf(xi, n);
                let inv_d = F::one() / F::from_usize_(d);
                for r in 0..rows {
                    let grow = &g[r * d..(r + 1) * d];
                    let xh = &xhat[r * d..(r + 1) * d];
                    let mut sum_dy = F::zero();
                    let mut sum_dyxh = F::zero();
                    for i in 0..d {
                        let dy = grow[i] * gd[i];
                        sum_dy = sum_dy + dy;
                        sum_dyxh = sum_dyxh + dy * xh[i];
                    }
                    for i in 0..d {
                        let dy = grow[i] * gd[i];
                        let dx =
                            (dy - (sum_dy + xh[i] * sum_dyxh) * inv_d) * inv_std[r];
                        buf[r * d + i] = buf[r * d + i] + dx;
                    }
                }
            }
        }) as Box<dyn Fn(&[F], &mut GradBuf<'_, F>)>
    });
    Ok(x.tape().push(oshape, Rc::new(out), needs, back))
}

/// LN over channels of a (B, C, H, W) tensor without materializing a permute:
/// rows are (b, spatial) pairs, channel elements stride by `hw`.
#[allow(clippy::too_many_arguments)]
fn ln_strided<'t, F: Real>(
    op: &'static str,
    x: Var<'t, F>,
    gamma: Var<'t, F>,
    beta: Var<'t, F>,
    eps: F,
    bsz: usize,
    c: usize,
    hw: usize,
    oshape: Vec<usize>,
) -> Result<Var<'t, F>> {
    let (xd, gd, bd) = (x.data(), gamma.data(), beta.data());
    let inv_c = F::one() / F::from_usize_(c);
    let mut out = vec![F::zero(); xd.len()];
    let mut xhat = vec![F::zero(); xd.len()];
    let mut inv_std = vec![F::zero(); bsz * hw];
    for b in 0..bsz {
        for p in 0..hw {
            let at = |ch: usize| (b * c + ch) * hw + p;
            let mut mean = F::zero();
            for ch in 0..c {
                mean = mean + xd[at(ch)];
            }
            mean = mean * inv_c;
            let mut var = F::zero();
            for ch in 0..c {
                let d = xd[at(ch)] - mean;
                var = var + d * d;
            }
            var = var * inv_c;
            let istd = F::one() / (var + eps).sqrt();
            inv_std[b * hw + p] = istd;
            for ch in 0..c {
                let xh = (xd[at(ch)] - mean) * istd;
                xhat[at(ch)] = xh;
                out[at(ch)] = gd[ch] * xh + bd[ch];
            }
        }
    }
    finite_or_err(op, x.tape(), &out)?;
    let needs = x.needs_grad() || gamma.needs_grad() || beta.needs_grad();
    let back = needs.then(|| {
        let (xi, gi, bi) = (x.index(), gamma.index(), beta.index());
        let (xn, gn, bn) = (x.needs_grad(), gamma.needs_grad(), beta.needs_grad());
        let n = xd.len();
        let gd = Rc::clone(&gd);
        let xhat = Rc::new(xhat);
        let inv_std = Rc::new(inv_std);
        Box::new(move |g: &[F], sink: &mut GradBuf<'_, F>| {
            if gn {
                let buf = sink.buf(gi, c);
                for b in 0..bsz {
                    for ch in 0..c {
                        let mut acc = F::zero();
                        for p in 0..hw {
                            let idx = (b * c + ch) * hw + p;
                            acc = acc + g[idx] * xhat[idx];
                        }
                        buf[ch] = buf[ch] + acc;
                    }
                }
            }
            if bn {
                let buf = sink.buf(bi, c);
                for b in 0..bsz {
                    for ch in 0..c {
                        let mut acc = F::zero();
                        for p in 0..hw {
                            acc = acc + g[(b * c + ch) * hw + p];
                        }
                        buf[ch] = buf[ch] + acc;
                    }
                }
            }
            if xn {
                let buf = sink.buf(xi, n);
                let inv_c = F::one() / F::from_usize_(c);
                for b in 0..bsz {
                    for p in 0..hw {
                        let at = |ch: usize| (b * c + ch) * hw + p;
                        let mut sum_dy = F::zero();
                        let mut sum_dyxh = F::zero();
                        for ch in 0..c {
                            let dy = g[at(ch)] * gd[ch];
                            sum_dy = sum_dy + dy;
                            sum_dyxh = sum_dyxh + dy * xhat[at(ch)];
                        }
                        let istd = inv_std[b * hw + p];
                        for ch in 0..c {
                            let idx = at(ch);
                            let dy = g[idx] * gd[ch];
                            let dx = (dy - (sum_dy + xhat[idx] * sum_dyxh) * inv_c) * istd;
                            buf[idx] = buf[idx] + dx;
                        }
                    }
                }
            }
        }) as Box<dyn Fn(&[F], &mut GradBuf<'_, F>)>
    });
    Ok(x.tape().push(oshape, Rc::new(out), needs, back))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tape::Tape;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(&[5], vec![0.0; 5]).unwrap();
        let y = softmax(x, 0).unwrap();
        for &v in y.data().iter() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let tape = Tape::<f64>::new();
        let x = tape
            .constant(&[2, 3, 2], (0..12).map(|i| (i as f64).sin() * 3.0).collect())
            .unwrap();
        let y = softmax(x, 1).unwrap();
        let d = y.data();
        for o in 0..2 {
            for i in 0..2 {
                let s: f64 = (0..3).map(|a| d[(o * 3 + a) * 2 + i]).sum();
                assert!((s - 1.0).abs() < 1e-12);
                for a in 0..3 {
                    assert!(d[(o * 3 + a) * 2 + i] >= 0.0);
                }
            }
        }
    }

    #[test]
    fn layernorm_normalizes_rows() {
        let tape = Tape::<f64>::new();
        let x = tape
            .constant(&[2, 4], vec![1., 2., 3., 4., -1., 0., 1., 2.])
            .unwrap();
        let g = tape.constant(&[4], vec![1.0; 4]).unwrap();
        let b = tape.constant(&[4], vec![0.0; 4]).unwrap();
        let y = layernorm(x, g, b, 1e-12).unwrap();
        let d = y.data();
        for r in 0..2 {
            let row = &d[r * 4..(r + 1) * 4];
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layernorm_chan_matches_row_variant() {
        // (1, C, 1, 1) has hw == 1, so both kernels see identical rows.
        let tape = Tape::<f64>::new();
        let vals = vec![0.3, -1.2, 2.0, 0.7];
        let x1 = tape.constant(&[1, 4, 1, 1], vals.clone()).unwrap();
        let x2 = tape.constant(&[1, 4], vals).unwrap();
        let g = tape.constant(&[4], vec![1.5, 0.5, 1.0, 2.0]).unwrap();
        let b = tape.constant(&[4], vec![0.1, -0.1, 0.0, 0.2]).unwrap();
        let y1 = layernorm_chan(x1, g, b, 1e-5).unwrap();
        let y2 = layernorm(x2, g, b, 1e-5).unwrap();
        for (a, c) in y1.data().iter().zip(y2.data().iter()) {
            assert!((a - c).abs() < 1e-14);
        }
    }
}
