//! Dense matrix products (single and batched) with cache-friendly kernels.

use alloc::boxed::Box;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::scalar::Real;
use crate::autodiff::tape::{finite_or_err, require_same_tape, GradBuf, Var};
use crate::error::{CoreError, Result};

/// c += a(m,k) @ b(k,n). ikj order so the inner loop streams rows of b and c.
pub(crate) fn mm_nn<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            let brow = &b[l * n..(l + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj = *cj + av * bj;
            }
        }
    }
}

/// c += a(m,k) @ b(n,k)^T. Materializes b^T so the inner loop is the same
/// vectorizable axpy as `mm_nn` (a dot-product inner loop would forbid SIMD
/// under strict float semantics).
pub(crate) fn mm_nt<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    let mut bt = vec![F::zero(); k * n];
    for j in 0..n {
        for l in 0..k {
            bt[l * n + j] = b[j * k + l];
        }
    }
    mm_nn(a, &bt, c, m, k, n);
}

/// c += a(k,m)^T @ b(k,n): c is (m,n), streamed row-wise.
pub(crate) fn mm_tn<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    for l in 0..k {
        let arow = &a[l * m..(l + 1) * m];
        let brow = &b[l * n..(l + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let crow = &mut c[i * n..(i + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj = *cj + av * bj;
            }
        }
    }
}

fn mm_shapes<F: Real>(
    op: &'static str,
    a: &Var<'_, F>,
    b: &Var<'_, F>,
    transpose_b: bool,
) -> Result<(usize, usize, usize, usize)> {
    let (sa, sb) = (a.shape(), b.shape());
    let (batch, off) = match (sa.len(), sb.len()) {
        (2, 2) => (1, 0),
        (3, 3) if sa[0] == sb[0] => (sa[0], 1),
        _ => {
            return Err(CoreError::ShapeMismatch {
                op,
                lhs: sa,
                rhs: sb,
            })
        }
    };
    let (m, k) = (sa[off], sa[off + 1]);
    let (bk, n) = if transpose_b {
        (sb[off + 1], sb[off])
    } else {
        (sb[off], sb[off + 1])
    };
    if k != bk {
        return Err(CoreError::ShapeMismatch {
            op,
            lhs: sa,
            rhs: sb,
        });
    }
    Ok((batch, m, k, n))
}

fn matmul_impl<'t, F: Real>(
    op: &'static str,
    a: Var<'t, F>,
    b: Var<'t, F>,
    transpose_b: bool,
) -> Result<Var<'t, F>> {
    require_same_tape(op, a, b)?;
    let (batch, m, k, n) = mm_shapes(op, &a, &b, transpose_b)?;
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![F::zero(); batch * m * n];
    for t in 0..batch {
        let asl = &ad[t * m * k..(t + 1) * m * k];
        let bsl = &bd[t * k * n..(t + 1) * k * n];
        let csl = &mut out[t * m * n..(t + 1) * m * n];
        if transpose_b {
            mm_nt(asl, bsl, csl, m, k, n);
        } else {
            mm_nn(asl, bsl, csl, m, k, n);
        }
    }
    finite_or_err(op, a.tape(), &out)?;
    let out_shape = if a.shape().len() == 2 {
        vec![m, n]
    } else {
        vec![batch, m, n]
    };
    let needs = a.needs_grad() || b.needs_grad();
    let back = needs.then(|| {
        let (ai, bi) = (a.index(), b.index());
        let (an, bn) = (a.needs_grad(), b.needs_grad());
        let (ad, bd) = (Rc::clone(&ad), Rc::clone(&bd));
        Box::new(move |g: &[F], sink: &mut GradBuf<'_, F>| {
            if an {
                let buf = sink.buf(ai, batch * m * k);
                for t in 0..batch {
                    let gsl = &g[t * m * n..(t + 1) * m * n];
                    let bsl = &bd[t * k * n..(t + 1) * k * n];
                    let out = &mut buf[t * m * k..(t + 1) * m * k];
                    if transpose_b {
                        // dA = g(m,n) @ b(n,k)
                        mm_nn(gsl, bsl, out, m, n, k);
                    } else {
                        // dA = g(m,n) @ b(k,n)^T
                        mm_nt(gsl, bsl, out, m, n, k);
                    }
                }
            }
            if bn {
                let buf = sink.buf(bi, bd.len());
                for t in 0..batch {
                    let gsl = &g[t * m * n..(t + 1) * m * n];
                    let asl = &ad[t * m * k..(t + 1) * m * k];
                    let out = &mut buf[t * k * n..(t + 1) * k * n];
                    if transpose_b {
                        // dB(n,k) = g(m,n)^T @ a(m,k)
                        mm_tn(gsl, asl, out, n, m, k);
                    } else {
                        // dB(k,n) = a(m,k)^T @ g(m,n)
                        mm_tn(asl, gsl, out, k, m, n);
                    }
                }
            }
        }) as Box<dyn Fn(&[F], &mut GradBuf<'_, F>)>
    });
    Ok(a.tape().push(out_shape, Rc::new(out), needs, back))
}

/// `(m,k) @ (k,n)` for 2-D operands.
pub fn matmul<'t, F: Real>(a: Var<'t, F>, b: Var<'t, F>) -> Result<Var<'t, F>> {
    matmul_impl("matmul", a, b, false)
}

/// Fused `x (m,k) @ w (k,n) + bias (n)`: the output starts as the broadcast
/// bias and the product accumulates into it, saving a full-size copy over
/// `matmul` + broadcast add.
pub fn linear<'t, F: Real>(x: Var<'t, F>, w: Var<'t, F>, bias: Var<'t, F>) -> Result<Var<'t, F>> {
    require_same_tape("linear", x, w)?;
    require_same_tape("linear", x, bias)?;
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bias.shape() != [ws[1]] {
        return Err(CoreError::ShapeMismatch {
            op: "linear",
            lhs: xs,
            rhs: ws,
        });
    }
    let (m, k, n) = (xs[0], xs[1], ws[1]);
    let (xd, wd, bd) = (x.data(), w.data(), bias.data());
    let mut out = Vec::with_capacity(m * n);
    for _ in 0..m {
        out.extend_from_slice(&bd);
    }
    mm_nn(&xd, &wd, &mut out, m, k, n);
    finite_or_err("linear", x.tape(), &out)?;
    let needs = x.needs_grad() || w.needs_grad() || bias.needs_grad();
    let back = needs.then(|| {
        let (xi, wi, bi) = (x.index(), w.index(), bias.index());
        let (xn, wn, bn) = (x.needs_grad(), w.needs_grad(), bias.needs_grad());
        let (xd, wd) = (Rc::clone(&xd), Rc::clone(&wd));
        Box::new(move |g: &[F], sink: &mut GradBuf<'_, F>| {
            if xn {
                let buf = sink.buf(xi, m * k);
                mm_nt(g, &wd, buf, m, n, k);
            }
            if wn {
                let buf = sink.buf(wi, k * n);
                mm_tn(&xd, g, buf, k, m, n);
            }
            if bn {
                let buf = sink.buf(bi, n);
                for row in g.chunks_exact(n) {
                    for (b, &gv) in buf.iter_mut().zip(row) {
                        *b = *b + gv;
                    }
                }
            }
        }) as Box<dyn Fn(&[F], &mut GradBuf<'_, F>)>
    });
    Ok(x.tape().push(vec![m, n], Rc::new(out), needs, back))
}

/// Batched `(B,m,k) @ (B,k,n)`.
pub fn bmm<'t, F: Real>(a: Var<'t, F>, b: Var<'t, F>) -> Result<Var<'t, F>> {
    matmul_impl("bmm", a, b, false)
}

/// Batched `(B,m,k) @ (B,n,k)^T`; the attention-logits product.
pub fn bmm_nt<'t, F: Real>(a: Var<'t, F>, b: Var<'t, F>) -> Result<Var<'t, F>> {
    matmul_impl("bmm_nt", a, b, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ops::sum_all;
    use crate::autodiff::tape::Tape;

    #[test]
    fn identity_matmul_returns_operand() {
        let tape = Tape::<f64>::new();
        let eye = tape
            .constant(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.])
            .unwrap();
        let a = tape
            .constant(&[3, 3], (0..9).map(|i| i as f64 * 0.37 - 1.0).collect())
            .unwrap();
        let y = matmul(eye, a).unwrap();
        assert_eq!(&*y.data(), &*a.data());
    }

    #[test]
    fn matmul_gradients_match_manual() {
        // y = a @ b, loss = sum(y): dA = 1 @ b^T, dB = a^T @ 1.
        let tape = Tape::<f64>::new();
        let a = tape.leaf_grad(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = tape.leaf_grad(&[2, 2], vec![5., 6., 7., 8.]).unwrap();
        let y = matmul(a, b).unwrap();
        let loss = sum_all(y).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), vec![11., 15., 11., 15.]);
        assert_eq!(tape.grad(b).unwrap(), vec![4., 4., 6., 6.]);
    }

    #[test]
    fn bmm_nt_equals_manual_transpose() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(&[1, 2, 3], (0..6).map(f64::from).collect()).unwrap();
        let b = tape.constant(&[1, 2, 3], (0..6).map(|i| f64::from(i) * 0.5).collect()).unwrap();
        let y = bmm_nt(a, b).unwrap();
        // row0 . row0 = (0,1,2).(0,.5,1) = 2.5 ; row0 . row1 = (0,1,2).(1.5,2,2.5) = 7
        assert_eq!(&*y.data(), &[2.5, 7.0, 7.0, 25.0]);
    }
}
