//! Element-type abstraction for the layer kernels.
//!
//! Everything numeric is written once, generic over [`Scalar`], and
//! instantiated at `f32` (training) or `f64` (gradient verification).
//! Both instantiations hit ndarray's fast sgemm/dgemm paths through
//! `LinalgScalar`.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, NumAssignOps};

pub trait Scalar:
    LinalgScalar
    + Float
    + NumAssignOps
    + ScalarOperand
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_usize(v: usize) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_usize(v: usize) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_usize(v: usize) -> Self {
        v as f64
    }
}
