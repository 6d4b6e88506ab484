//! Central-finite-difference gradient verification.

use alloc::vec::Vec;

use super::scalar::Real;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{CoreError, Result};

/// Compares the analytic gradient of `f` at `x` against central differences.
///
/// Returns the max over elements of
/// `|analytic - fd| / max(|analytic|, |fd|, 1e-8)`.
/// `f` must be deterministic; it is re-evaluated `2 * x.len()` times.
pub fn grad_check<F: Real>(
    f: impl for<'a> Fn(&'a Tape<F>, Var<'a, F>) -> Result<Var<'a, F>>,
    x: &Tensor<F>,
    eps: F,
) -> Result<F> {
    if eps <= F::zero() {
        return Err(CoreError::invalid("grad_check", "eps must be positive"));
    }
    let analytic = {
        let tape = Tape::new();
        let vx = tape.leaf_grad(x.shape(), x.values().to_vec())?;
        let loss = f(&tape, vx)?;
        if loss.len() != 1 {
            return Err(CoreError::NonScalarLoss { shape: loss.shape() });
        }
        tape.backward(loss)?;
        tape.grad(vx).unwrap_or_else(|| alloc::vec![F::zero(); x.len()])
    };

    let eval = |values: &[F]| -> Result<F> {
        let tape = Tape::eval();
        let vx = tape.leaf_grad(x.shape(), values.to_vec())?;
        f(&tape, vx)?.item()
    };

    let mut probe: Vec<F> = x.values().to_vec();
    let floor = F::c(1e-8);
    let two = F::c(2.0);
    let mut worst = F::zero();
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = eval(&probe)?;
        probe[i] = orig - eps;
        let down = eval(&probe)?;
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(CoreError::NonFinite { op: "grad_check" });
        }
        let fd = (up - down) / (two * eps);
        let denom = analytic[i].abs().max(fd.abs()).max(floor);
        let rel = (analytic[i] - fd).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ops;

    #[test]
    fn linear_function_checks_exactly() {
        // Both the analytic gradient and central differences are exact for
        // sums; with binary-representable probe values and a power-of-two
        // eps the reported error is exactly zero.
        let x = Tensor::new(&[4], alloc::vec![0.25, -0.5, 1.0, 2.0]).unwrap();
        let eps = 2.0_f64.powi(-17);
        let err = grad_check(|_, v| ops::sum_all(v), &x, eps).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn sigmoid_mean_passes_tolerance() {
        let x = Tensor::new(&[6], alloc::vec![0.5, -1.0, 2.0, 0.1, -0.4, 1.7]).unwrap();
        let err = grad_check(
            |_, v| ops::mean_all(ops::sigmoid(v)?),
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "err {err}");
    }
}
