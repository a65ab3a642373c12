//! Scalar abstraction: training runs in f64 so finite-difference gates are
//! tight, inference may run in f32.

use core::fmt::{Debug, Display};

use num_traits::Float;

/// Element type for graph tensors. Implemented for `f64` (training default)
/// and `f32` (inference option).
pub trait Real: Float + Debug + Display + Default + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn into_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn into_f64(self) -> f64 {
        self as f64
    }
}
