//! Scalar abstraction for the numeric core.
//!
//! Everything numeric (tensors, DSP, blending, optimization) is generic over
//! [`Scalar`] so the same code runs in `f32` or `f64`. The crate root exports
//! `f64` aliases, which is what the training pipeline uses.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, Signed};

/// Floating-point scalar type the numeric core is generic over.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + Signed + Debug + Display + Send + Sync + rustfft::FftNum
{
    /// Lossy conversion from `f64` (used for literals and derived constants).
    fn cast(v: f64) -> Self;
    fn as_f64(self) -> f64;

    fn cast_usize(v: usize) -> Self {
        Self::cast(v as f64)
    }
}

impl Scalar for f32 {
    fn cast(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn cast(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}
