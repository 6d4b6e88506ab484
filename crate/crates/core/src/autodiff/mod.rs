//! Reverse-mode automatic differentiation over dense tensors, plus the
//! optimizers and learning-rate schedules the trainer needs.
//!
//! The graph is a per-step Wengert list: ops append nodes to a [`tape::Tape`]
//! and record backward closures only when some input requires gradients, so
//! teacher/evaluation forwards pay no tape overhead. Tapes are rebuilt every
//! forward pass; nothing persists between steps except parameter tensors.

pub mod check;
pub mod ops;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use check::grad_check;
pub use optim::{adam_step, adamw_step, lr_at, OptimizerState, Schedule};
pub use params::{NetworkKind, ParameterStore};
pub use scalar::Real;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
