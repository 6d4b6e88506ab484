//! The per-step computation graph.
//!
//! A `Tape` is a Wengert list: ops append nodes whose parents always have
//! smaller indices, so reverse iteration is already a topological order.
//! Backward closures are recorded only when an input needs gradients and the
//! tape has gradients enabled; evaluation-only forwards (teacher networks,
//! probes, finite-difference probing) run through the same op code with zero
//! tape overhead beyond value storage.

use alloc::boxed::Box;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use super::scalar::Real;
use super::tensor::Tensor;
use crate::error::{CoreError, Result};

/// Gradient buffers for all nodes, handed to backward closures.
pub struct GradBuf<'a, F: Real> {
    grads: &'a mut Vec<Option<Vec<F>>>,
}

impl<'a, F: Real> GradBuf<'a, F> {
    /// The gradient buffer of node `idx`, zero-initialized to `len` on first
    /// touch. Closures add into it.
    pub fn buf(&mut self, idx: usize, len: usize) -> &mut [F] {
        self.grads[idx].get_or_insert_with(|| vec![F::zero(); len])
    }
}

type BackFn<F> = Box<dyn Fn(&[F], &mut GradBuf<'_, F>)>;

struct Node<F: Real> {
    shape: Vec<usize>,
    data: Rc<Vec<F>>,
    needs_grad: bool,
    backward: Option<BackFn<F>>,
}

struct TapeInner<F: Real> {
    nodes: Vec<Node<F>>,
    /// Accumulated leaf gradients; repeated `backward` calls add here until
    /// `zero_grads`.
    acc: Vec<Option<Vec<F>>>,
}

pub struct Tape<F: Real> {
    inner: RefCell<TapeInner<F>>,
    grad_enabled: bool,
    check_finite: bool,
}

/// A handle to one node of a tape. Cheap to copy; values are shared via `Rc`.
#[derive(Clone, Copy)]
pub struct Var<'t, F: Real> {
    tape: &'t Tape<F>,
    idx: usize,
}

impl<F: Real> Tape<F> {
    /// A gradient-recording tape with finite-output checking on.
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(TapeInner {
                nodes: Vec::new(),
                acc: Vec::new(),
            }),
            grad_enabled: true,
            check_finite: true,
        }
    }

    /// A forward-only tape: no backward closures are recorded.
    pub fn eval() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Disables the per-op NaN/Inf scan (used by tests that exercise the
    /// error path itself).
    pub fn without_finite_checks(mut self) -> Self {
        self.check_finite = false;
        self
    }

    pub(crate) fn check_finite(&self) -> bool {
        self.check_finite
    }

    /// Appends a node. `backward` is dropped on eval tapes.
    pub(crate) fn push(
        &self,
        shape: Vec<usize>,
        data: Rc<Vec<F>>,
        needs_grad: bool,
        backward: Option<BackFn<F>>,
    ) -> Var<'_, F> {
        let needs = needs_grad && self.grad_enabled;
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            shape,
            data,
            needs_grad: needs,
            backward: if needs { backward } else { None },
        });
        inner.acc.push(None);
        Var {
            tape: self,
            idx: inner.nodes.len() - 1,
        }
    }

    /// A leaf with no gradient.
    pub fn constant(&self, shape: &[usize], values: Vec<F>) -> Result<Var<'_, F>> {
        if super::tensor::numel(shape) != values.len() {
            return Err(CoreError::invalid("constant", "shape/length mismatch"));
        }
        Ok(self.push(shape.to_vec(), Rc::new(values), false, None))
    }

    pub fn scalar(&self, value: F) -> Var<'_, F> {
        self.push(vec![1], Rc::new(vec![value]), false, None)
    }

    /// A leaf seeded from a tensor; it participates in backward iff the
    /// tensor requires gradients.
    pub fn leaf(&self, t: &Tensor<F>) -> Var<'_, F> {
        self.push(
            t.shape().to_vec(),
            Rc::new(t.values().to_vec()),
            t.requires_grad(),
            None,
        )
    }

    /// A leaf that always participates in backward.
    pub fn leaf_grad(&self, shape: &[usize], values: Vec<F>) -> Result<Var<'_, F>> {
        if super::tensor::numel(shape) != values.len() {
            return Err(CoreError::invalid("leaf", "shape/length mismatch"));
        }
        Ok(self.push(shape.to_vec(), Rc::new(values), true, None))
    }

    /// Runs reverse accumulation from a scalar `loss`. Leaf gradients are
    /// added into per-leaf accumulators readable via [`Tape::grad`]; calling
    /// `backward` again without [`Tape::zero_grads`] accumulates.
    pub fn backward(&self, loss: Var<'_, F>) -> Result<()> {
        if !core::ptr::eq(self, loss.tape) {
            return Err(CoreError::invalid("backward", "loss from another tape"));
        }
        {
            let inner = self.inner.borrow();
            let node = &inner.nodes[loss.idx];
            if node.data.len() != 1 {
                return Err(CoreError::NonScalarLoss {
                    shape: node.shape.clone(),
                });
            }
        }
        let mut inner = self.inner.borrow_mut();
        let TapeInner { nodes, acc } = &mut *inner;
        let mut grads: Vec<Option<Vec<F>>> = vec![None; nodes.len()];
        grads[loss.idx] = Some(vec![F::one()]);
        for idx in (0..=loss.idx).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.backward {
                Some(back) => {
                    let mut sink = GradBuf { grads: &mut grads };
                    back(&g, &mut sink);
                }
                None => {
                    // Leaf: fold this pass's gradient into the accumulator.
                    match &mut acc[idx] {
                        Some(a) => {
                            for (ai, gi) in a.iter_mut().zip(&g) {
                                *ai = *ai + *gi;
                            }
                        }
                        None => acc[idx] = Some(g),
                    }
                }
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, var: Var<'_, F>) -> Option<Vec<F>> {
        self.inner.borrow().acc[var.idx].clone()
    }

    pub fn zero_grads(&self) {
        for g in self.inner.borrow_mut().acc.iter_mut() {
            *g = None;
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    fn node_shape(&self, idx: usize) -> Vec<usize> {
        self.inner.borrow().nodes[idx].shape.clone()
    }

    fn node_data(&self, idx: usize) -> Rc<Vec<F>> {
        Rc::clone(&self.inner.borrow().nodes[idx].data)
    }

    fn node_needs_grad(&self, idx: usize) -> bool {
        self.inner.borrow().nodes[idx].needs_grad
    }
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'t, F: Real> Var<'t, F> {
    pub fn shape(&self) -> Vec<usize> {
        self.tape.node_shape(self.idx)
    }

    /// Shared handle to the node's values (no copy).
    pub fn data(&self) -> Rc<Vec<F>> {
        self.tape.node_data(self.idx)
    }

    pub fn len(&self) -> usize {
        self.data().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn needs_grad(&self) -> bool {
        self.tape.node_needs_grad(self.idx)
    }

    pub fn tape(&self) -> &'t Tape<F> {
        self.tape
    }

    pub(crate) fn index(&self) -> usize {
        self.idx
    }

    /// The single element of a scalar node.
    pub fn item(&self) -> Result<F> {
        let d = self.data();
        if d.len() != 1 {
            return Err(CoreError::invalid("item", "not a scalar"));
        }
        Ok(d[0])
    }

    /// Copies this node's values into a detached tensor.
    pub fn to_tensor(&self) -> Tensor<F> {
        Tensor::new(&self.shape(), self.data().to_vec()).expect("node shape is consistent")
    }

    pub fn same_tape(&self, other: &Var<'_, F>) -> bool {
        core::ptr::eq(self.tape, other.tape)
    }
}

/// Shared scaffolding for ops: verifies tape identity and extracts parents.
pub(crate) fn require_same_tape<'t, F: Real>(
    op: &'static str,
    a: Var<'t, F>,
    b: Var<'t, F>,
) -> Result<()> {
    if !a.same_tape(&b) {
        return Err(CoreError::invalid(op, "operands from different tapes"));
    }
    Ok(())
}

pub(crate) fn finite_or_err<F: Real>(op: &'static str, tape: &Tape<F>, data: &[F]) -> Result<()> {
    if tape.check_finite() && !data.iter().all(|v| v.is_finite()) {
        return Err(CoreError::NonFinite { op });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ops;

    #[test]
    fn backward_on_non_scalar_errors() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf_grad(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            tape.backward(x),
            Err(CoreError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf_grad(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let sq = ops::mul(x, x).unwrap();
        let loss = ops::sum_all(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn mean_gradient_is_uniform() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf_grad(&[4], vec![1.0, -1.0, 2.0, 0.0]).unwrap();
        let loss = ops::mean_all(x).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn repeated_backward_accumulates_and_zeroing_resets() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf_grad(&[2], vec![1.0, 2.0]).unwrap();
        let loss = ops::sum_all(x).unwrap();
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), vec![2.0, 2.0]);
        tape.zero_grads();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn eval_tape_records_no_gradients() {
        let tape = Tape::<f64>::eval();
        let x = tape.leaf_grad(&[2], vec![1.0, 2.0]).unwrap();
        assert!(!x.needs_grad());
    }
}
