//! The element type abstraction: training runs at f32, verification (gradient
//! checks, closed-form oracles) at f64.

use num_traits::Float;

/// Floating-point element of a tensor. `num_traits::Float` (libm-backed in
/// `no_std`) supplies exp/ln/sqrt/tanh/powf; `erf` is added here for the
/// exact GELU.
pub trait Real:
    Float + num_traits::FromPrimitive + core::fmt::Debug + core::fmt::Display + Send + Sync + 'static
{
    fn erf(self) -> Self;

    /// Shorthand for lossy conversion from f64 constants.
    #[inline]
    fn c(x: f64) -> Self {
        Self::from_f64(x).unwrap()
    }

    #[inline]
    fn from_usize_(n: usize) -> Self {
        Self::from_usize(n).unwrap()
    }
}

impl Real for f32 {
    #[inline]
    fn erf(self) -> Self {
        libm::erff(self)
    }
}

impl Real for f64 {
    #[inline]
    fn erf(self) -> Self {
        libm::erf(self)
    }
}
