//! Error types shared across the crate.

use alloc::string::String;
use alloc::vec::Vec;

/// Failures produced by tensor ops, training, and data generation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoreError {
    /// Two operands (or an operand and a config) disagree on shape.
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// An op produced a NaN or infinity.
    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },
    /// `backward` was called on a tensor that is not a scalar.
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    /// An optimizer step found a trainable parameter without a gradient.
    #[error("missing gradient for parameter `{name}`")]
    MissingGrad { name: String },
    /// Generic precondition violation, with the offending op named.
    #[error("{op}: {msg}")]
    InvalidArg { op: &'static str, msg: String },
    /// Configuration rejected before any computation ran.
    #[error("config error: {0}")]
    Config(String),
    /// Training aborted on a non-finite loss; carries a diagnostic snapshot.
    #[error("non-finite loss at iteration {iter}: {details}")]
    NonFiniteLoss { iter: u64, details: String },
}

pub type Result<T> = core::result::Result<T, CoreError>;

impl CoreError {
    pub fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        CoreError::InvalidArg {
            op,
            msg: msg.into(),
        }
    }
}
