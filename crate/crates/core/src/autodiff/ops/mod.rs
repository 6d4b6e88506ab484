//! Forward ops with recorded backward closures.
//!
//! Every op follows the same contract: validate shapes (structured error
//! naming the op and both shapes), compute the output, scan it for NaN/Inf
//! when the tape has finite-checking enabled, and record a backward closure
//! only if some input needs gradients.

mod conv;
mod elementwise;
mod linalg;
mod norm;
mod reduce;
mod shape_ops;

pub use conv::{avg_pool2d, conv2d};
pub use elementwise::{
    add, add_chan, affine, clamp_min, gelu, leaky_relu, log, mul, relu, scalar_mul, sigmoid,
    stop_gradient, sub,
};
pub use linalg::{bmm, bmm_nt, linear, matmul};
pub use norm::{layernorm, layernorm_chan, softmax};
pub use reduce::{mean_all, mean_axis, sum_all, sum_axis};
pub use shape_ops::{
    add_bcast, bias_lookup, concat, cyclic_shift, merge_heads, narrow, reshape, split_heads,
    upsample_bilinear, window_merge, window_partition,
};

/// Prebuilt-index plumbing for callers that reuse one gather layout many
/// times per pass (the ViT forward).
pub(crate) mod shape_maps {
    use alloc::rc::Rc;
    use alloc::vec::Vec;

    use super::shape_ops;
    use crate::autodiff::scalar::Real;
    use crate::autodiff::tape::Var;
    use crate::error::Result;

    pub(crate) use shape_ops::{
        cyclic_shift_map, merge_heads_map, qkv_head_map, window_merge_map, window_partition_map,
    };

    pub(crate) fn gather_shared<'t, F: Real>(
        op: &'static str,
        x: Var<'t, F>,
        out_shape: Vec<usize>,
        map: &Rc<Vec<u32>>,
    ) -> Result<Var<'t, F>> {
        shape_ops::gather_op(op, x, out_shape, Rc::clone(map))
    }
}

use super::scalar::Real;
use super::tape::Var;
use crate::error::{CoreError, Result};

pub(crate) fn same_shape<F: Real>(
    op: &'static str,
    a: &Var<'_, F>,
    b: &Var<'_, F>,
) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(CoreError::ShapeMismatch {
            op,
            lhs: sa,
            rhs: sb,
        });
    }
    Ok(())
}


/// Splits a shape at `axis` into (outer, axis_len, inner) extents.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let alen = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, alen, inner)
}
