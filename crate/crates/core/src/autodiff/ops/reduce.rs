//! Reductions to scalars and along a single axis.

use alloc::boxed::Box;
use alloc::rc::Rc;
use alloc::vec;

use super::axis_split;
use crate::autodiff::scalar::Real;
use crate::autodiff::tape::{finite_or_err, GradBuf, Var};
use crate::error::{CoreError, Result};

pub fn sum_all<'t, F: Real>(x: Var<'t, F>) -> Result<Var<'t, F>> {
    let xd = x.data();
    let total = xd.iter().fold(F::zero(), |a, &v| a + v);
    finite_or_err("sum_all", x.tape(), &[total])?;
    let needs = x.needs_grad();
    let back = needs.then(|| {
        let (xi, n) = (x.index(), xd.len());
        Box::new(move |g: &[F], sink: &mut GradBuf<'_, F>| {
            let buf = sink.buf(xi, n);
            for b in buf.iter_mut() {
                *b = *b + g[0];
            }
        }) as Box<dyn Fn(&[F], &mut GradBuf<'_, F>)>
    });
    Ok(x.tape().push(vec![1], Rc::new(vec![total]), needs, back))
}

pub fn mean_all<'t, F: Real>(x: Var<'t, F>) -> Result<Var<'t, F>> {
    let n = x.len();
    if n == 0 {
        return Err(CoreError::invalid("mean_all", "empty tensor"));
    }
    let s = sum_all(x)?;
    super::affine(s, F::one() / F::from_usize_(n), F::zero())
}

/// Sums over `axis`, keeping it with extent 1.
pub fn sum_axis<'t, F: Real>(x: Var<'t, F>, axis: usize) -> Result<Var<'t, F>> {
    let xs = x.shape();
    if axis >= xs.len() {
        return Err(CoreError::invalid("sum_axis", "axis out of range"));
    }
    let (outer, alen, inner) = axis_split(&xs, axis);
    let xd = x.data();
    let mut out = vec![F::zero(); outer * inner];
    for o in 0..outer {
        for a in 0..alen {
            let base = (o * alen + a) * inner;
            let orow = &mut out[o * inner..(o + 1) * inner];
            for i in 0..inner {
                orow[i] = orow[i] + xd[base + i];
            }
        }
    }
    finite_or_err("sum_axis", x.tape(), &out)?;
    let mut oshape = xs.clone();
    oshape[axis] = 1;
    let needs = x.needs_grad();
    let back = needs.then(|| {
        let (xi, n) = (x.index(), xd.len());
        Box::new(move |g: &[F], sink: &mut GradBuf<'_, F>| {
            let buf = sink.buf(xi, n);
            for o in 0..outer {
                let grow = &g[o * inner..(o + 1) * inner];
                for a in 0..alen {
                    let base = (o * alen + a) * inner;
                    for i in 0..inner {
                        buf[base + i] = buf[base + i] + grow[i];
                    }
                }
            }
        }) as Box<dyn Fn(&[F], &mut GradBuf<'_, F>)>
    });
    Ok(x.tape().push(oshape, Rc::new(out), needs, back))
}

pub fn mean_axis<'t, F: Real>(x: Var<'t, F>, axis: usize) -> Result<Var<'t, F>> {
    let alen = *x
        .shape()
        .get(axis)
        .ok_or_else(|| CoreError::invalid("mean_axis", "axis out of range"))?;
    let s = sum_axis(x, axis)?;
    super::affine(s, F::one() / F::from_usize_(alen), F::zero())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tape::Tape;

    #[test]
    fn sum_axis_keeps_dim() {
        let tape = Tape::<f64>::new();
        let x = tape
            .constant(&[2, 3], vec![1., 2., 3., 4., 5., 6.])
            .unwrap();
        let y = sum_axis(x, 1).unwrap();
        assert_eq!(y.shape(), vec![2, 1]);
        assert_eq!(&*y.data(), &[6.0, 15.0]);
        let z = sum_axis(x, 0).unwrap();
        assert_eq!(z.shape(), vec![1, 3]);
        assert_eq!(&*z.data(), &[5.0, 7.0, 9.0]);
    }

    #[test]
    fn mean_axis_gradient_spreads() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf_grad(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let y = mean_axis(x, 1).unwrap();
        let loss = sum_all(y).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), vec![0.5; 4]);
    }
}
