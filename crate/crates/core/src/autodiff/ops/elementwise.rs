//! Pointwise ops and the detachment primitive.

use alloc::boxed::Box;
use alloc::rc::Rc;
use alloc::vec::Vec;

use super::same_shape;
use crate::autodiff::scalar::Real;
use crate::autodiff::tape::{finite_or_err, require_same_tape, GradBuf, Var};
use crate::error::{CoreError, Result};

/// Builds a unary op from a value map and a derivative in terms of
/// (input, output).
fn unary<'t, F: Real>(
    op: &'static str,
    x: Var<'t, F>,
    f: impl Fn(F) -> F,
    df: impl Fn(F, F) -> F + 'static,
) -> Result<Var<'t, F>> {
    let xd = x.data();
    let out: Vec<F> = xd.iter().map(|&v| f(v)).collect();
    finite_or_err(op, x.tape(), &out)?;
    let out = Rc::new(out);
    let needs = x.needs_grad();
    let back = needs.then(|| {
        let (xi, xl) = (x.index(), xd.len());
        let xd = Rc::clone(&xd);
        let yd = Rc::clone(&out);
        Box::new(move |g: &[F], sink: &mut GradBuf<'_, F>| {
            let buf = sink.buf(xi, xl);
            for i in 0..xl {
                buf[i] = buf[i] + g[i] * df(xd[i], yd[i]);
            }
        }) as Box<dyn Fn(&[F], &mut GradBuf<'_, F>)>
    });
    Ok(x.tape().push(x.shape(), out, needs, back))
}

pub fn add<'t, F: Real>(a: Var<'t, F>, b: Var<'t, F>) -> Result<Var<'t, F>> {
    require_same_tape("add", a, b)?;
    same_shape("add", &a, &b)?;
    let (ad, bd) = (a.data(), b.data());
    let out: Vec<F> = ad.iter().zip(bd.iter()).map(|(&x, &y)| x + y).collect();
    finite_or_err("add", a.tape(), &out)?;
    let needs = a.needs_grad() || b.needs_grad();
    let back = needs.then(|| {
        let (ai, bi, n) = (a.index(), b.index(), ad.len());
        let (an, bn) = (a.needs_grad(), b.needs_grad());
        Box::new(move |g: &[F], sink: &mut GradBuf<'_, F>| {
            if an {
                let buf = sink.buf(ai, n);
                for i in 0..n {
                    buf[i] = buf[i] + g[i];
                }
            }
            if bn {
                let buf = sink.buf(bi, n);
                for i in 0..n {
                    buf[i] = buf[i] + g[i];
                }
            }
        }) as Box<dyn Fn(&[F], &mut GradBuf<'_, F>)>
    });
    Ok(a.tape().push(a.shape(), Rc::new(out), needs, back))
}

pub fn sub<'t, F: Real>(a: Var<'t, F>, b: Var<'t, F>) -> Result<Var<'t, F>> {
    require_same_tape("sub", a, b)?;
    same_shape("sub", &a, &b)?;
    let (ad, bd) = (a.data(), b.data());
    let out: Vec<F> = ad.iter().zip(bd.iter()).map(|(&x, &y)| x - y).collect();
    finite_or_err("sub", a.tape(), &out)?;
    let needs = a.needs_grad() || b.needs_grad();
    let back = needs.then(|| {
        let (ai, bi, n) = (a.index(), b.index(), ad.len());
        let (an, bn) = (a.needs_grad(), b.needs_grad());
        Box::new(move |g: &[F], sink: &mut GradBuf<'_, F>| {
            if an {
                let buf = sink.buf(ai, n);
                for i in 0..n {
                    buf[i] = buf[i] + g[i];
                }
            }
            if bn {
                let buf = sink.buf(bi, n);
                for i in 0..n {
                    buf[i] = buf[i] - g[i];
                }
            }
        }) as Box<dyn Fn(&[F], &mut GradBuf<'_, F>)>
    });
    Ok(a.tape().push(a.shape(), Rc::new(out), needs, back))
}

pub fn mul<'t, F: Real>(a: Var<'t, F>, b: Var<'t, F>) -> Result<Var<'t, F>> {
    require_same_tape("mul", a, b)?;
    same_shape("mul", &a, &b)?;
    let (ad, bd) = (a.data(), b.data());
    let out: Vec<F> = ad.iter().zip(bd.iter()).map(|(&x, &y)| x * y).collect();
    finite_or_err("mul", a.tape(), &out)?;
    let needs = a.needs_grad() || b.needs_grad();
    let back = needs.then(|| {
        let (ai, bi, n) = (a.index(), b.index(), ad.len());
        let (an, bn) = (a.needs_grad(), b.needs_grad());
        let (ad, bd) = (Rc::clone(&ad), Rc::clone(&bd));
        Box::new(move |g: &[F], sink: &mut GradBuf<'_, F>| {
            if an {
                let buf = sink.buf(ai, n);
                for i in 0..n {
                    buf[i] = buf[i] + g[i] * bd[i];
                }
            }
            if bn {
                let buf = sink.buf(bi, n);
                for i in 0..n {
                    buf[i] = buf[i] + g[i] * ad[i];
                }
            }
        }) as Box<dyn Fn(&[F], &mut GradBuf<'_, F>)>
    });
    Ok(a.tape().push(a.shape(), Rc::new(out), needs, back))
}

/// `scale * x + shift`, the scalar affine carrier for negation, `1 - x`, and
/// scalar addition.
pub fn affine<'t, F: Real>(x: Var<'t, F>, scale: F, shift: F) -> Result<Var<'t, F>> {
    unary("affine", x, |v| scale * v + shift, move |_, _| scale)
}

pub fn scalar_mul<'t, F: Real>(x: Var<'t, F>, scale: F) -> Result<Var<'t, F>> {
    affine(x, scale, F::zero())
}

pub fn relu<'t, F: Real>(x: Var<'t, F>) -> Result<Var<'t, F>> {
    unary(
        "relu",
        x,
        |v| if v > F::zero() { v } else { F::zero() },
        |v, _| if v > F::zero() { F::one() } else { F::zero() },
    )
}

pub fn leaky_relu<'t, F: Real>(x: Var<'t, F>, slope: F) -> Result<Var<'t, F>> {
    unary(
        "leaky_relu",
        x,
        move |v| if v > F::zero() { v } else { slope * v },
        move |v, _| if v > F::zero() { F::one() } else { slope },
    )
}

pub fn sigmoid<'t, F: Real>(x: Var<'t, F>) -> Result<Var<'t, F>> {
    unary(
        "sigmoid",
        x,
        |v| F::one() / (F::one() + (-v).exp()),
        |_, y| y * (F::one() - y),
    )
}

/// Exact GELU: `x * Phi(x)` with the Gaussian CDF via erf. The CDF is cached
/// for backward, which then only needs the Gaussian pdf.
pub fn gelu<'t, F: Real>(x: Var<'t, F>) -> Result<Var<'t, F>> {
    let half = F::c(0.5);
    let inv_sqrt2 = F::c(core::f64::consts::FRAC_1_SQRT_2);
    let inv_sqrt_2pi = F::c(0.3989422804014327);
    let xd = x.data();
    let mut cdf = Vec::with_capacity(xd.len());
    let mut out = Vec::with_capacity(xd.len());
    for &v in xd.iter() {
        let c = half * (F::one() + (v * inv_sqrt2).erf());
        cdf.push(c);
        out.push(v * c);
    }
    finite_or_err("gelu", x.tape(), &out)?;
    let needs = x.needs_grad();
    let back = needs.then(|| {
        let (xi, n) = (x.index(), xd.len());
        let xd = Rc::clone(&xd);
        let cdf = Rc::new(cdf);
        Box::new(move |g: &[F], sink: &mut GradBuf<'_, F>| {
            let buf = sink.buf(xi, n);
            for i in 0..n {
                let v = xd[i];
                let pdf = inv_sqrt_2pi * (-(v * v) * half).exp();
                buf[i] = buf[i] + g[i] * (cdf[i] + v * pdf);
            }
        }) as Box<dyn Fn(&[F], &mut GradBuf<'_, F>)>
    });
    Ok(x.tape().push(x.shape(), Rc::new(out), needs, back))
}

pub fn log<'t, F: Real>(x: Var<'t, F>) -> Result<Var<'t, F>> {
    unary("log", x, |v| v.ln(), |v, _| F::one() / v)
}

/// `max(x, floor)`; gradient passes only where `x > floor`.
pub fn clamp_min<'t, F: Real>(x: Var<'t, F>, floor: F) -> Result<Var<'t, F>> {
    unary(
        "clamp_min",
        x,
        move |v| if v > floor { v } else { floor },
        move |v, _| if v > floor { F::one() } else { F::zero() },
    )
}

/// Detaches `x` from the graph: same values, no parents, no gradient. This is
/// the mechanism behind "the momentum branch carries no gradient" and
/// "weights are data" decisions.
pub fn stop_gradient<'t, F: Real>(x: Var<'t, F>) -> Var<'t, F> {
    x.tape().push(x.shape(), x.data(), false, None)
}

/// `x + bias` broadcast over axis 1 of an `(B, C, ...)` tensor; `bias` has
/// shape `(C,)`. The conv bias carrier.
pub fn add_chan<'t, F: Real>(x: Var<'t, F>, bias: Var<'t, F>) -> Result<Var<'t, F>> {
    require_same_tape("add_chan", x, bias)?;
    let xs = x.shape();
    let bs = bias.shape();
    if xs.len() < 2 || bs.len() != 1 || bs[0] != xs[1] {
        return Err(CoreError::ShapeMismatch {
            op: "add_chan",
            lhs: xs,
            rhs: bs,
        });
    }
    let (batch, ch) = (xs[0], xs[1]);
    let inner: usize = xs[2..].iter().product();
    let (xd, bd) = (x.data(), bias.data());
    let mut out = Vec::with_capacity(xd.len());
    for b in 0..batch {
        for c in 0..ch {
            let base = (b * ch + c) * inner;
            for i in 0..inner {
                out.push(xd[base + i] + bd[c]);
            }
        }
    }
    finite_or_err("add_chan", x.tape(), &out)?;
    let needs = x.needs_grad() || bias.needs_grad();
    let back = needs.then(|| {
        let (xi, bi, n) = (x.index(), bias.index(), xd.len());
        let (xn, bn) = (x.needs_grad(), bias.needs_grad());
        Box::new(move |g: &[F], sink: &mut GradBuf<'_, F>| {
            if xn {
                let buf = sink.buf(xi, n);
                for i in 0..n {
                    buf[i] = buf[i] + g[i];
                }
            }
            if bn {
                let buf = sink.buf(bi, ch);
                for b in 0..batch {
                    for c in 0..ch {
                        let base = (b * ch + c) * inner;
                        let mut acc = F::zero();
                        for i in 0..inner {
                            acc = acc + g[base + i];
                        }
                        buf[c] = buf[c] + acc;
                    }
                }
            }
        }) as Box<dyn Fn(&[F], &mut GradBuf<'_, F>)>
    });
    Ok(x.tape().push(x.shape(), Rc::new(out), needs, back))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ops::{mean_all, sum_all};
    use crate::autodiff::tape::Tape;

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(&[2, 2], alloc::vec![0.0; 4]).unwrap();
        let b = tape.constant(&[2, 3], alloc::vec![0.0; 6]).unwrap();
        match add(a, b) {
            Err(CoreError::ShapeMismatch { op, lhs, rhs }) => {
                assert_eq!(op, "add");
                assert_eq!(lhs, alloc::vec![2, 2]);
                assert_eq!(rhs, alloc::vec![2, 3]);
            }
            Err(other) => panic!("expected shape mismatch, got {other:?}"),
            Ok(_) => panic!("expected shape mismatch, got Ok"),
        }
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(&[1], alloc::vec![-1.0]).unwrap();
        assert!(matches!(log(x), Err(CoreError::NonFinite { op: "log" })));
    }

    #[test]
    fn stop_gradient_blocks_backward() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf_grad(&[2], alloc::vec![1.0, 2.0]).unwrap();
        let detached = stop_gradient(x);
        let loss = sum_all(detached).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(&[3], alloc::vec![0.0; 3]).unwrap();
        let y = sigmoid(x).unwrap();
        assert_eq!(&*y.data(), &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn add_chan_broadcasts_and_reduces() {
        let tape = Tape::<f64>::new();
        let x = tape
            .leaf_grad(&[1, 2, 2], alloc::vec![0.0, 0.0, 0.0, 0.0])
            .unwrap();
        let b = tape.leaf_grad(&[2], alloc::vec![1.0, -1.0]).unwrap();
        let y = add_chan(x, b).unwrap();
        assert_eq!(&*y.data(), &[1.0, 1.0, -1.0, -1.0]);
        let loss = mean_all(y).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(b).unwrap(), alloc::vec![0.5, 0.5]);
    }
}
