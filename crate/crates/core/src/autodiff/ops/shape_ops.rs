//! Data-movement ops: reshape, slicing, window partitioning, shifts, head
//! split/merge, broadcast adds, bilinear upsampling.
//!
//! Most of these are gathers through a precomputed index map (out[i] =
//! in[map[i]]); their backward is the matching scatter-add, which for the
//! bijective ones is just the inverse permutation.

use alloc::boxed::Box;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::scalar::Real;
use crate::autodiff::tape::{finite_or_err, require_same_tape, GradBuf, Var};
use crate::autodiff::tensor::numel;
use crate::error::{CoreError, Result};

/// Same data, new shape. Shares the value buffer.
pub fn reshape<'t, F: Real>(x: Var<'t, F>, shape: &[usize]) -> Result<Var<'t, F>> {
    if numel(shape) != x.len() {
        return Err(CoreError::ShapeMismatch {
            op: "reshape",
            lhs: x.shape(),
            rhs: shape.to_vec(),
        });
    }
    let needs = x.needs_grad();
    let back = needs.then(|| {
        let (xi, n) = (x.index(), x.len());
        Box::new(move |g: &[F], sink: &mut GradBuf<'_, F>| {
            let buf = sink.buf(xi, n);
            for i in 0..n {
                buf[i] = buf[i] + g[i];
            }
        }) as Box<dyn Fn(&[F], &mut GradBuf<'_, F>)>
    });
    Ok(x.tape().push(shape.to_vec(), x.data(), needs, back))
}

/// Gather node: out[i] = x[map[i]]. `map` entries must index into `x`.
/// Exposed crate-internally so callers with repeated identical layouts (the
/// ViT forward) can prebuild and share maps.
pub(crate) fn gather_op<'t, F: Real>(
    op: &'static str,
    x: Var<'t, F>,
    out_shape: Vec<usize>,
    map: Rc<Vec<u32>>,
) -> Result<Var<'t, F>> {
    debug_assert_eq!(numel(&out_shape), map.len());
    let xd = x.data();
    let out: Vec<F> = map.iter().map(|&i| xd[i as usize]).collect();
    finite_or_err(op, x.tape(), &out)?;
    let needs = x.needs_grad();
    let back = needs.then(|| {
        let (xi, n) = (x.index(), xd.len());
        let map = Rc::clone(&map);
        Box::new(move |g: &[F], sink: &mut GradBuf<'_, F>| {
            let buf = sink.buf(xi, n);
            for (o, &i) in map.iter().enumerate() {
                buf[i as usize] = buf[i as usize] + g[o];
            }
        }) as Box<dyn Fn(&[F], &mut GradBuf<'_, F>)>
    });
    Ok(x.tape().push(out_shape, Rc::new(out), needs, back))
}

/// Splits a `(B, C, H, W)` map into non-overlapping `ws x ws` windows of
/// channel-last tokens: output `(B*nH*nW, ws*ws, C)`. H and W must divide.
pub fn window_partition<'t, F: Real>(x: Var<'t, F>, ws: usize) -> Result<Var<'t, F>> {
    let xs = x.shape();
    if xs.len() != 4 || ws == 0 || xs[2] % ws != 0 || xs[3] % ws != 0 {
        return Err(CoreError::ShapeMismatch {
            op: "window_partition",
            lhs: xs,
            rhs: vec![ws],
        });
    }
    let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (shape, map) = window_partition_map(b, c, h, w, ws);
    gather_op("window_partition", x, shape, Rc::new(map))
}

pub(crate) fn window_partition_map(
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    ws: usize,
) -> (Vec<usize>, Vec<u32>) {
    let (nh, nw) = (h / ws, w / ws);
    let t = ws * ws;
    let mut map = Vec::with_capacity(b * nh * nw * t * c);
    for bi in 0..b {
        for wy in 0..nh {
            for wx in 0..nw {
                for ty in 0..ws {
                    for tx in 0..ws {
                        let (y, xp) = (wy * ws + ty, wx * ws + tx);
                        for ch in 0..c {
                            map.push((((bi * c + ch) * h + y) * w + xp) as u32);
                        }
                    }
                }
            }
        }
    }
    (vec![b * nh * nw, t, c], map)
}

/// Inverse of [`window_partition`]: `(B*nH*nW, ws*ws, C)` back to
/// `(B, C, H, W)` given the original spatial extent.
pub fn window_merge<'t, F: Real>(
    x: Var<'t, F>,
    ws: usize,
    b: usize,
    h: usize,
    w: usize,
) -> Result<Var<'t, F>> {
    let xs = x.shape();
    let (nh, nw) = (h / ws, w / ws);
    let t = ws * ws;
    if xs.len() != 3 || xs[0] != b * nh * nw || xs[1] != t || h % ws != 0 || w % ws != 0 {
        return Err(CoreError::ShapeMismatch {
            op: "window_merge",
            lhs: xs,
            rhs: vec![b, h, w, ws],
        });
    }
    let c = xs[2];
    let (shape, map) = window_merge_map(b, c, h, w, ws);
    gather_op("window_merge", x, shape, Rc::new(map))
}

pub(crate) fn window_merge_map(
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    ws: usize,
) -> (Vec<usize>, Vec<u32>) {
    let (nh, nw) = (h / ws, w / ws);
    let t = ws * ws;
    let mut map = vec![0u32; b * c * h * w];
    for bi in 0..b {
        for wy in 0..nh {
            for wx in 0..nw {
                let win = (bi * nh + wy) * nw + wx;
                for ty in 0..ws {
                    for tx in 0..ws {
                        let (y, xp) = (wy * ws + ty, wx * ws + tx);
                        let tok = ty * ws + tx;
                        for ch in 0..c {
                            map[((bi * c + ch) * h + y) * w + xp] =
                                ((win * t + tok) * c + ch) as u32;
                        }
                    }
                }
            }
        }
    }
    (vec![b, c, h, w], map)
}

/// Cyclic roll of the spatial axes: out[y, x] = in[(y+dy) mod H, (x+dx) mod W].
/// The inverse is the shift by (-dy, -dx).
pub fn cyclic_shift<'t, F: Real>(x: Var<'t, F>, dy: isize, dx: isize) -> Result<Var<'t, F>> {
    let xs = x.shape();
    if xs.len() != 4 {
        return Err(CoreError::invalid("cyclic_shift", "expected 4-D input"));
    }
    let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let map = cyclic_shift_map(b, c, h, w, dy, dx);
    gather_op("cyclic_shift", x, xs, Rc::new(map))
}

pub(crate) fn cyclic_shift_map(
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    dy: isize,
    dx: isize,
) -> Vec<u32> {
    let mut map = Vec::with_capacity(b * c * h * w);
    for bc in 0..b * c {
        for y in 0..h {
            let sy = (y as isize + dy).rem_euclid(h as isize) as usize;
            for xp in 0..w {
                let sx = (xp as isize + dx).rem_euclid(w as isize) as usize;
                map.push((bc * h * w + sy * w + sx) as u32);
            }
        }
    }
    map
}

/// Map slicing one of q/k/v (`which` in 0..3) out of a packed `(N, T, 3C)`
/// projection directly into per-head layout `(N*heads, T, C/heads)`.
pub(crate) fn qkv_head_map(
    n: usize,
    t: usize,
    c: usize,
    heads: usize,
    which: usize,
) -> (Vec<usize>, Vec<u32>) {
    let d = c / heads;
    let off = which * c;
    let mut map = Vec::with_capacity(n * t * c);
    for ni in 0..n {
        for hd in 0..heads {
            for ti in 0..t {
                for j in 0..d {
                    map.push(((ni * t + ti) * 3 * c + off + hd * d + j) as u32);
                }
            }
        }
    }
    (vec![n * heads, t, d], map)
}

pub(crate) fn merge_heads_map(n: usize, t: usize, d: usize, heads: usize) -> (Vec<usize>, Vec<u32>) {
    let c = heads * d;
    let mut map = Vec::with_capacity(n * t * c);
    for ni in 0..n {
        for ti in 0..t {
            for hd in 0..heads {
                for j in 0..d {
                    map.push((((ni * heads + hd) * t + ti) * d + j) as u32);
                }
            }
        }
    }
    (vec![n, t, c], map)
}

/// `(N, T, C)` tokens to `(N*heads, T, C/heads)` per-head matrices.
pub fn split_heads<'t, F: Real>(x: Var<'t, F>, heads: usize) -> Result<Var<'t, F>> {
    let xs = x.shape();
    if xs.len() != 3 || heads == 0 || xs[2] % heads != 0 {
        return Err(CoreError::ShapeMismatch {
            op: "split_heads",
            lhs: xs,
            rhs: vec![heads],
        });
    }
    let (n, t, c) = (xs[0], xs[1], xs[2]);
    let d = c / heads;
    let mut map = Vec::with_capacity(x.len());
    for ni in 0..n {
        for hd in 0..heads {
            for ti in 0..t {
                for j in 0..d {
                    map.push(((ni * t + ti) * c + hd * d + j) as u32);
                }
            }
        }
    }
    gather_op("split_heads", x, vec![n * heads, t, d], Rc::new(map))
}

/// Inverse of [`split_heads`].
pub fn merge_heads<'t, F: Real>(x: Var<'t, F>, heads: usize) -> Result<Var<'t, F>> {
    let xs = x.shape();
    if xs.len() != 3 || heads == 0 || xs[0] % heads != 0 {
        return Err(CoreError::ShapeMismatch {
            op: "merge_heads",
            lhs: xs,
            rhs: vec![heads],
        });
    }
    let (nh, t, d) = (xs[0], xs[1], xs[2]);
    let n = nh / heads;
    let c = heads * d;
    let mut map = Vec::with_capacity(x.len());
    for ni in 0..n {
        for ti in 0..t {
            for hd in 0..heads {
                for j in 0..d {
                    map.push((((ni * heads + hd) * t + ti) * d + j) as u32);
                }
            }
        }
    }
    gather_op("merge_heads", x, vec![n, t, c], Rc::new(map))
}

/// Expands a relative-position table `(heads, S)` into per-pair logit biases
/// `(heads, T, T)` through `pair_index[i*T+j] in 0..S`.
pub fn bias_lookup<'t, F: Real>(
    table: Var<'t, F>,
    pair_index: &[usize],
    t: usize,
) -> Result<Var<'t, F>> {
    let ts = table.shape();
    if ts.len() != 2 || pair_index.len() != t * t {
        return Err(CoreError::ShapeMismatch {
            op: "bias_lookup",
            lhs: ts,
            rhs: vec![t, t],
        });
    }
    let (heads, s) = (ts[0], ts[1]);
    if pair_index.iter().any(|&p| p >= s) {
        return Err(CoreError::invalid("bias_lookup", "pair index out of table"));
    }
    let mut map = Vec::with_capacity(heads * t * t);
    for hd in 0..heads {
        for &p in pair_index {
            map.push((hd * s + p) as u32);
        }
    }
    gather_op("bias_lookup", table, vec![heads, t, t], Rc::new(map))
}

/// `x (N, rest...) + b (rest...)`, broadcasting `b` across the leading axis.
pub fn add_bcast<'t, F: Real>(x: Var<'t, F>, b: Var<'t, F>) -> Result<Var<'t, F>> {
    require_same_tape("add_bcast", x, b)?;
    let (xs, bs) = (x.shape(), b.shape());
    if xs.len() < bs.len() || xs[xs.len() - bs.len()..] != bs[..] {
        return Err(CoreError::ShapeMismatch {
            op: "add_bcast",
            lhs: xs,
            rhs: bs,
        });
    }
    let r = numel(&bs);
    let groups = x.len() / r;
    let (xd, bd) = (x.data(), b.data());
    let mut out = Vec::with_capacity(xd.len());
    for gidx in 0..groups {
        for i in 0..r {
            out.push(xd[gidx * r + i] + bd[i]);
        }
    }
    finite_or_err("add_bcast", x.tape(), &out)?;
    let needs = x.needs_grad() || b.needs_grad();
    let back = needs.then(|| {
        let (xi, bi, n) = (x.index(), b.index(), xd.len());
        let (xn, bn) = (x.needs_grad(), b.needs_grad());
        Box::new(move |g: &[F], sink: &mut GradBuf<'_, F>| {
            if xn {
                let buf = sink.buf(xi, n);
                for i in 0..n {
                    buf[i] = buf[i] + g[i];
                }
            }
            if bn {
                let buf = sink.buf(bi, r);
                for gidx in 0..groups {
                    for i in 0..r {
                        buf[i] = buf[i] + g[gidx * r + i];
                    }
                }
            }
        }) as Box<dyn Fn(&[F], &mut GradBuf<'_, F>)>
    });
    Ok(x.tape().push(xs, Rc::new(out), needs, back))
}

/// Slice `len` entries starting at `start` along `axis`.
pub fn narrow<'t, F: Real>(
    x: Var<'t, F>,
    axis: usize,
    start: usize,
    len: usize,
) -> Result<Var<'t, F>> {
    let xs = x.shape();
    if axis >= xs.len() || start + len > xs[axis] {
        return Err(CoreError::invalid("narrow", "slice out of range"));
    }
    let (outer, alen, inner) = super::axis_split(&xs, axis);
    let mut map = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        for a in start..start + len {
            for i in 0..inner {
                map.push(((o * alen + a) * inner + i) as u32);
            }
        }
    }
    let mut oshape = xs;
    oshape[axis] = len;
    gather_op("narrow", x, oshape, Rc::new(map))
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<'t, F: Real>(xs: &[Var<'t, F>], axis: usize) -> Result<Var<'t, F>> {
    let first = *xs
        .first()
        .ok_or_else(|| CoreError::invalid("concat", "empty input list"))?;
    let base = first.shape();
    if axis >= base.len() {
        return Err(CoreError::invalid("concat", "axis out of range"));
    }
    let mut total_axis = 0usize;
    for v in xs {
        require_same_tape("concat", first, *v)?;
        let s = v.shape();
        if s.len() != base.len()
            || s.iter()
                .zip(&base)
                .enumerate()
                .any(|(i, (a, b))| i != axis && a != b)
        {
            return Err(CoreError::ShapeMismatch {
                op: "concat",
                lhs: base,
                rhs: s,
            });
        }
        total_axis += s[axis];
    }
    let (outer, _, inner) = super::axis_split(&base, axis);
    let mut oshape = base.clone();
    oshape[axis] = total_axis;
    let mut out = Vec::with_capacity(outer * total_axis * inner);
    let datas: Vec<_> = xs.iter().map(|v| v.data()).collect();
    let alens: Vec<usize> = xs.iter().map(|v| v.shape()[axis]).collect();
    for o in 0..outer {
        for (d, &al) in datas.iter().zip(&alens) {
            out.extend_from_slice(&d[o * al * inner..(o + 1) * al * inner]);
        }
    }
    finite_or_err("concat", first.tape(), &out)?;
    let needs = xs.iter().any(|v| v.needs_grad());
    let back = needs.then(|| {
        let idxs: Vec<usize> = xs.iter().map(|v| v.index()).collect();
        let flags: Vec<bool> = xs.iter().map(|v| v.needs_grad()).collect();
        let sizes: Vec<usize> = xs.iter().map(|v| v.len()).collect();
        let alens = alens.clone();
        Box::new(move |g: &[F], sink: &mut GradBuf<'_, F>| {
            let mut offset_in_axis = 0usize;
            for (p, &al) in alens.iter().enumerate() {
                if flags[p] {
                    let buf = sink.buf(idxs[p], sizes[p]);
                    for o in 0..outer {
                        let src = (o * total_axis + offset_in_axis) * inner;
                        let dst = o * al * inner;
                        for i in 0..al * inner {
                            buf[dst + i] = buf[dst + i] + g[src + i];
                        }
                    }
                }
                offset_in_axis += al;
            }
        }) as Box<dyn Fn(&[F], &mut GradBuf<'_, F>)>
    });
    Ok(first.tape().push(oshape, Rc::new(out), needs, back))
}

/// Bilinear upsampling of `(B,C,h,w)` by an integer factor, half-pixel
/// aligned with edge clamping (constant maps stay constant).
pub fn upsample_bilinear<'t, F: Real>(x: Var<'t, F>, factor: usize) -> Result<Var<'t, F>> {
    let xs = x.shape();
    if xs.len() != 4 || factor == 0 {
        return Err(CoreError::invalid("upsample_bilinear", "expected 4-D input"));
    }
    let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (ho, wo) = (h * factor, w * factor);
    // Per-output-coordinate source pairs and weights, shared across rows/cols.
    let build = |n_in: usize, n_out: usize| -> Vec<(usize, usize, F)> {
        (0..n_out)
            .map(|o| {
                let s = (o as f64 + 0.5) / factor as f64 - 0.5;
                if s <= 0.0 {
                    (0, 0, F::zero())
                } else {
                    let i0 = libm::floor(s) as usize;
                    let i1 = (i0 + 1).min(n_in - 1);
                    (i0, i1, F::c(s - i0 as f64))
                }
            })
            .collect()
    };
    let ymap = build(h, ho);
    let xmap = build(w, wo);
    let xd = x.data();
    let mut out = vec![F::zero(); b * c * ho * wo];
    for bc in 0..b * c {
        let plane = &xd[bc * h * w..(bc + 1) * h * w];
        let oplane = &mut out[bc * ho * wo..(bc + 1) * ho * wo];
        for (oy, &(y0, y1, wy)) in ymap.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in xmap.iter().enumerate() {
                let top = plane[y0 * w + x0] * (F::one() - wx) + plane[y0 * w + x1] * wx;
                let bot = plane[y1 * w + x0] * (F::one() - wx) + plane[y1 * w + x1] * wx;
                oplane[oy * wo + ox] = top * (F::one() - wy) + bot * wy;
            }
        }
    }
    finite_or_err("upsample_bilinear", x.tape(), &out)?;
    let needs = x.needs_grad();
    let back = needs.then(|| {
        let (xi, n) = (x.index(), xd.len());
        let ymap = Rc::new(ymap);
        let xmap = Rc::new(xmap);
        Box::new(move |g: &[F], sink: &mut GradBuf<'_, F>| {
            let buf = sink.buf(xi, n);
            for bc in 0..b * c {
                let gplane = &g[bc * ho * wo..(bc + 1) * ho * wo];
                let xgrad = &mut buf[bc * h * w..(bc + 1) * h * w];
                for (oy, &(y0, y1, wy)) in ymap.iter().enumerate() {
                    for (ox, &(x0, x1, wx)) in xmap.iter().enumerate() {
                        let gv = gplane[oy * wo + ox];
                        xgrad[y0 * w + x0] =
                            xgrad[y0 * w + x0] + gv * (F::one() - wy) * (F::one() - wx);
                        xgrad[y0 * w + x1] = xgrad[y0 * w + x1] + gv * (F::one() - wy) * wx;
                        xgrad[y1 * w + x0] = xgrad[y1 * w + x0] + gv * wy * (F::one() - wx);
                        xgrad[y1 * w + x1] = xgrad[y1 * w + x1] + gv * wy * wx;
                    }
                }
            }
        }) as Box<dyn Fn(&[F], &mut GradBuf<'_, F>)>
    });
    Ok(x.tape().push(vec![b, c, ho, wo], Rc::new(out), needs, back))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ops::sum_all;
    use crate::autodiff::tape::Tape;

    fn seq(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64).collect()
    }

    #[test]
    fn partition_then_merge_is_identity() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(&[2, 3, 4, 4], seq(96)).unwrap();
        let part = window_partition(x, 2).unwrap();
        assert_eq!(part.shape(), vec![2 * 4, 4, 3]);
        let back = window_merge(part, 2, 2, 4, 4).unwrap();
        assert_eq!(&*back.data(), &*x.data());
    }

    #[test]
    fn shift_then_unshift_is_identity() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(&[1, 2, 4, 4], seq(32)).unwrap();
        let s = cyclic_shift(x, 2, 2).unwrap();
        let u = cyclic_shift(s, -2, -2).unwrap();
        assert_eq!(&*u.data(), &*x.data());
        assert_ne!(&*s.data(), &*x.data());
    }

    #[test]
    fn split_then_merge_heads_is_identity() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(&[3, 4, 6], seq(72)).unwrap();
        let s = split_heads(x, 2).unwrap();
        assert_eq!(s.shape(), vec![6, 4, 3]);
        let m = merge_heads(s, 2).unwrap();
        assert_eq!(&*m.data(), &*x.data());
    }

    #[test]
    fn concat_and_narrow_are_inverse() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(&[2, 2], seq(4)).unwrap();
        let b = tape.constant(&[2, 3], seq(6)).unwrap();
        let cat = concat(&[a, b], 1).unwrap();
        assert_eq!(cat.shape(), vec![2, 5]);
        let a2 = narrow(cat, 1, 0, 2).unwrap();
        let b2 = narrow(cat, 1, 2, 3).unwrap();
        assert_eq!(&*a2.data(), &*a.data());
        assert_eq!(&*b2.data(), &*b.data());
    }

    #[test]
    fn upsample_constant_stays_constant() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(&[1, 1, 3, 3], vec![0.7; 9]).unwrap();
        let y = upsample_bilinear(x, 4).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 12, 12]);
        for &v in y.data().iter() {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn gather_backward_scatters() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf_grad(&[1, 1, 2, 2], seq(4)).unwrap();
        let s = cyclic_shift(x, 1, 0).unwrap();
        let loss = sum_all(s).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), vec![1.0; 4]);
    }
}
