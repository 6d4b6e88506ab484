//! 2-D convolution (direct) and non-overlapping average pooling.
//!
//! The conv loops precompute the valid output range per kernel offset so the
//! innermost loops are branch-free (and vectorizable at stride 1).

use alloc::boxed::Box;
use alloc::rc::Rc;
use alloc::vec;

use crate::autodiff::scalar::Real;
use crate::autodiff::tape::{finite_or_err, require_same_tape, GradBuf, Var};
use crate::error::{CoreError, Result};

fn conv_out_extent(inp: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (inp + 2 * pad).checked_sub(k).map(|v| v / stride + 1)
}

/// Inclusive output range `[lo, hi]` for which `o*stride + koff - pad` lands
/// inside `[0, extent)`; `None` when empty.
fn valid_range(
    koff: usize,
    stride: usize,
    pad: usize,
    extent: usize,
    out_extent: usize,
) -> Option<(usize, usize)> {
    let lo_num = pad as isize - koff as isize;
    let lo = if lo_num <= 0 {
        0
    } else {
        ((lo_num as usize) + stride - 1) / stride
    };
    let hi_num = extent as isize - 1 + pad as isize - koff as isize;
    if hi_num < 0 {
        return None;
    }
    let hi = (hi_num as usize / stride).min(out_extent - 1);
    (lo <= hi).then_some((lo, hi))
}

/// `x (B,Cin,H,W)` * `w (Cout,Cin,kh,kw)` with zero padding. Bias is a
/// separate `add_chan`.
pub fn conv2d<'t, F: Real>(
    x: Var<'t, F>,
    w: Var<'t, F>,
    stride: usize,
    padding: usize,
) -> Result<Var<'t, F>> {
    require_same_tape("conv2d", x, w)?;
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || stride == 0 {
        return Err(CoreError::ShapeMismatch {
            op: "conv2d",
            lhs: xs,
            rhs: ws,
        });
    }
    let (bsz, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, _, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    let (ho, wo) = match (
        conv_out_extent(h, kh, stride, padding),
        conv_out_extent(wd, kw, stride, padding),
    ) {
        (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
        _ => {
            return Err(CoreError::ShapeMismatch {
                op: "conv2d",
                lhs: xs,
                rhs: ws,
            })
        }
    };
    let (xd, wdat) = (x.data(), w.data());
    let mut out = vec![F::zero(); bsz * cout * ho * wo];
    for b in 0..bsz {
        for co in 0..cout {
            let oplane = &mut out[(b * cout + co) * ho * wo..(b * cout + co + 1) * ho * wo];
            for ci in 0..cin {
                let xplane = &xd[(b * cin + ci) * h * wd..(b * cin + ci + 1) * h * wd];
                for ky in 0..kh {
                    let Some((oy_lo, oy_hi)) = valid_range(ky, stride, padding, h, ho) else {
                        continue;
                    };
                    for kx in 0..kw {
                        let Some((ox_lo, ox_hi)) = valid_range(kx, stride, padding, wd, wo)
                        else {
                            continue;
                        };
                        let wv = wdat[((co * cin + ci) * kh + ky) * kw + kx];
                        let span = ox_hi - ox_lo;
                        for oy in oy_lo..=oy_hi {
                            let iy = oy * stride + ky - padding;
                            let ix0 = ox_lo * stride + kx - padding;
                            let xoff = iy * wd + ix0;
                            let orow = &mut oplane[oy * wo + ox_lo..=oy * wo + ox_hi];
                            if stride == 1 {
                                let xrow = &xplane[xoff..=xoff + span];
                                for (o, &xv) in orow.iter_mut().zip(xrow) {
                                    *o = *o + wv * xv;
                                }
                            } else {
                                for (d, o) in orow.iter_mut().enumerate() {
                                    *o = *o + wv * xplane[xoff + d * stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    finite_or_err("conv2d", x.tape(), &out)?;
    let needs = x.needs_grad() || w.needs_grad();
    let back = needs.then(|| {
        let (xi, wi) = (x.index(), w.index());
        let (xn, wn) = (x.needs_grad(), w.needs_grad());
        let (xd, wdat) = (Rc::clone(&xd), Rc::clone(&wdat));
        Box::new(move |g: &[F], sink: &mut GradBuf<'_, F>| {
            if xn {
                let buf = sink.buf(xi, xd.len());
                for b in 0..bsz {
                    for co in 0..cout {
                        let gplane = &g[(b * cout + co) * ho * wo..(b * cout + co + 1) * ho * wo];
                        for ci in 0..cin {
                            let xgrad =
                                &mut buf[(b * cin + ci) * h * wd..(b * cin + ci + 1) * h * wd];
                            for ky in 0..kh {
                                let Some((oy_lo, oy_hi)) =
                                    valid_range(ky, stride, padding, h, ho)
                                else {
                                    continue;
                                };
                                for kx in 0..kw {
                                    let Some((ox_lo, ox_hi)) =
                                        valid_range(kx, stride, padding, wd, wo)
                                    else {
                                        continue;
                                    };
                                    let wv = wdat[((co * cin + ci) * kh + ky) * kw + kx];
                                    let span = ox_hi - ox_lo;
                                    for oy in oy_lo..=oy_hi {
                                        let iy = oy * stride + ky - padding;
                                        let ix0 = ox_lo * stride + kx - padding;
                                        let xoff = iy * wd + ix0;
                                        let grow = &gplane[oy * wo + ox_lo..=oy * wo + ox_hi];
                                        if stride == 1 {
                                            let xrow = &mut xgrad[xoff..=xoff + span];
                                            for (xg, &gv) in xrow.iter_mut().zip(grow) {
                                                *xg = *xg + wv * gv;
                                            }
                                        } else {
                                            for (d, &gv) in grow.iter().enumerate() {
                                                let p = xoff + d * stride;
                                                xgrad[p] = xgrad[p] + wv * gv;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if wn {
                let buf = sink.buf(wi, wdat.len());
                for b in 0..bsz {
                    for co in 0..cout {
                        let gplane = &g[(b * cout + co) * ho * wo..(b * cout + co + 1) * ho * wo];
                        for ci in 0..cin {
                            let xplane = &xd[(b * cin + ci) * h * wd..(b * cin + ci + 1) * h * wd];
                            for ky in 0..kh {
                                let Some((oy_lo, oy_hi)) =
                                    valid_range(ky, stride, padding, h, ho)
                                else {
                                    continue;
                                };
                                for kx in 0..kw {
                                    let Some((ox_lo, ox_hi)) =
                                        valid_range(kx, stride, padding, wd, wo)
                                    else {
                                        continue;
                                    };
                                    let mut acc = F::zero();
                                    let span = ox_hi - ox_lo;
                                    for oy in oy_lo..=oy_hi {
                                        let iy = oy * stride + ky - padding;
                                        let ix0 = ox_lo * stride + kx - padding;
                                        let xoff = iy * wd + ix0;
                                        let grow = &gplane[oy * wo + ox_lo..=oy * wo + ox_hi];
                                        if stride == 1 {
                                            let xrow = &xplane[xoff..=xoff + span];
                                            let mut a0 = F::zero();
                                            let mut a1 = F::zero();
                                            let mut a2 = F::zero();
                                            let mut a3 = F::zero();
                                            let mut it = grow.chunks_exact(4);
                                            let mut xt = xrow.chunks_exact(4);
                                            for (gc, xc) in (&mut it).zip(&mut xt) {
                                                a0 = a0 + gc[0] * xc[0];
                                                a1 = a1 + gc[1] * xc[1];
                                                a2 = a2 + gc[2] * xc[2];
                                                a3 = a3 + gc[3] * xc[3];
                                            }
                                            for (gv, xv) in
                                                it.remainder().iter().zip(xt.remainder())
                                            {
                                                a0 = a0 + *gv * *xv;
                                            }
                                            acc = acc + ((a0 + a1) + (a2 + a3));
                                        } else {
                                            for (d, &gv) in grow.iter().enumerate() {
                                                acc = acc + gv * xplane[xoff + d * stride];
                                            }
                                        }
                                    }
                                    let widx = ((co * cin + ci) * kh + ky) * kw + kx;
                                    buf[widx] = buf[widx] + acc;
                                }
                            }
                        }
                    }
                }
            }
        }) as Box<dyn Fn(&[F], &mut GradBuf<'_, F>)>
    });
    Ok(x
        .tape()
        .push(vec![bsz, cout, ho, wo], Rc::new(out), needs, back))
}

/// Non-overlapping `k x k` mean pooling of `(B,C,H,W)`; H and W must divide.
pub fn avg_pool2d<'t, F: Real>(x: Var<'t, F>, k: usize) -> Result<Var<'t, F>> {
    let xs = x.shape();
    if xs.len() != 4 || k == 0 || xs[2] % k != 0 || xs[3] % k != 0 {
        return Err(CoreError::ShapeMismatch {
            op: "avg_pool2d",
            lhs: xs,
            rhs: vec![k],
        });
    }
    let (bsz, ch, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (ho, wo) = (h / k, w / k);
    let inv = F::one() / F::from_usize_(k * k);
    let xd = x.data();
    let mut out = vec![F::zero(); bsz * ch * ho * wo];
    for bc in 0..bsz * ch {
        let xplane = &xd[bc * h * w..(bc + 1) * h * w];
        let oplane = &mut out[bc * ho * wo..(bc + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = F::zero();
                for dy in 0..k {
                    for dx in 0..k {
                        acc = acc + xplane[(oy * k + dy) * w + ox * k + dx];
                    }
                }
                oplane[oy * wo + ox] = acc * inv;
            }
        }
    }
    finite_or_err("avg_pool2d", x.tape(), &out)?;
    let needs = x.needs_grad();
    let back = needs.then(|| {
        let (xi, n) = (x.index(), xd.len());
        Box::new(move |g: &[F], sink: &mut GradBuf<'_, F>| {
            let buf = sink.buf(xi, n);
            for bc in 0..bsz * ch {
                let gplane = &g[bc * ho * wo..(bc + 1) * ho * wo];
                let xgrad = &mut buf[bc * h * w..(bc + 1) * h * w];
                for oy in 0..ho {
                    for ox in 0..wo {
                        let gv = gplane[oy * wo + ox] * inv;
                        for dy in 0..k {
                            for dx in 0..k {
                                let p = (oy * k + dy) * w + ox * k + dx;
                                xgrad[p] = xgrad[p] + gv;
                            }
                        }
                    }
                }
            }
        }) as Box<dyn Fn(&[F], &mut GradBuf<'_, F>)>
    });
    Ok(x
        .tape()
        .push(vec![bsz, ch, ho, wo], Rc::new(out), needs, back))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ops::sum_all;
    use alloc::vec::Vec;
    use crate::autodiff::tape::Tape;

    #[test]
    fn ones_kernel_on_ones_image_sums_window() {
        // 3x3 all-ones kernel over a 5x5 all-ones image, no padding: every
        // output position sums 9 inputs.
        let tape = Tape::<f64>::new();
        let x = tape.constant(&[1, 1, 5, 5], vec![1.0; 25]).unwrap();
        let w = tape.constant(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let y = conv2d(x, w, 1, 0).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn padding_and_stride_extents() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(&[1, 1, 4, 4], vec![1.0; 16]).unwrap();
        let w = tape.constant(&[2, 1, 3, 3], vec![0.5; 18]).unwrap();
        let y = conv2d(x, w, 1, 1).unwrap();
        assert_eq!(y.shape(), vec![1, 2, 4, 4]);
        // corner sees a 2x2 valid patch
        assert_eq!(y.data()[0], 2.0);
        // center sees 3x3
        assert_eq!(y.data()[5], 4.5);
    }

    #[test]
    fn strided_conv_matches_direct_sum() {
        let tape = Tape::<f64>::new();
        let vals: Vec<f64> = (0..32).map(|i| i as f64 * 0.1).collect();
        let x = tape.constant(&[1, 2, 4, 4], vals.clone()).unwrap();
        let w = tape.constant(&[1, 2, 2, 2], vec![0.25; 8]).unwrap();
        let y = conv2d(x, w, 2, 0).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 2, 2]);
        // direct summation oracle
        for oy in 0..2 {
            for ox in 0..2 {
                let mut acc = 0.0;
                for ci in 0..2 {
                    for ky in 0..2 {
                        for kx in 0..2 {
                            acc += 0.25 * vals[ci * 16 + (oy * 2 + ky) * 4 + ox * 2 + kx];
                        }
                    }
                }
                assert!((y.data()[oy * 2 + ox] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_gradients_flow_to_both_operands() {
        let tape = Tape::<f64>::new();
        let x = tape
            .leaf_grad(&[1, 1, 3, 3], (0..9).map(|i| i as f64 * 0.3).collect())
            .unwrap();
        let w = tape.leaf_grad(&[1, 1, 2, 2], vec![0.5, -0.5, 1.0, 0.25]).unwrap();
        let y = conv2d(x, w, 1, 1).unwrap();
        let loss = sum_all(y).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).unwrap().iter().any(|&v| v != 0.0));
        assert!(tape.grad(w).unwrap().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn avg_pool_of_constant_is_constant() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(&[1, 2, 4, 4], vec![0.25; 32]).unwrap();
        let y = avg_pool2d(x, 2).unwrap();
        assert_eq!(y.shape(), vec![1, 2, 2, 2]);
        assert!(y.data().iter().all(|&v| (v - 0.25f64).abs() < 1e-15));
    }
}
