//! Desk-scale domain-adaptive semantic segmentation with momentum-teacher
//! smoothing, dynamically weighted adversarial alignment, and learning-dynamics
//! spectral diagnostics.
//!
//! The crate is `no_std` + `alloc`: everything in here is pure computation over
//! owned buffers. File formats, CSV/SVG emission, and the CLI live in the
//! companion `mtseg-cli` crate.
//!
//! Module map:
//! - [`autodiff`]: dense tensors, the reverse-mode tape, forward ops, optimizers
//!   and learning-rate schedules.
//! - [`nets`]: the shifted-window attention extractor, a residual CNN baseline,
//!   per-pixel classifier head, domain discriminators, similarity network.
//! - [`momentum`]: EMA teacher machinery and pseudo-label / feature routing.
//! - [`objectives`]: cross-entropy, adversarial and similarity losses, entropy
//!   maps and dynamic per-pixel weights.
//! - [`synthdata`]: seeded synthetic sim2real scenes plus augmentation.
//! - [`trainer`]: warm-up / multi-round training orchestration.
//! - [`diagnostics`]: prediction-change traces, DFT spectra, the Gaussian toy
//!   experiment.
//! - [`metrics`]: confusion matrices and (m)IoU.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod diagnostics;
pub mod error;
pub mod metrics;
pub mod momentum;
pub mod nets;
pub mod objectives;
pub mod rng;
pub mod synthdata;
pub mod trainer;

pub use autodiff::scalar::Real;
pub use autodiff::tensor::Tensor;
pub use error::{CoreError, Result};
