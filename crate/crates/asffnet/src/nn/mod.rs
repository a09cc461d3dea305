//! From-scratch CNN layer kernels with explicit forward/backward passes.
//!
//! Kernels are free functions over `ndarray` tensors (NCHW layout) so the
//! same code serves the batched `f32` training path and the single-sample
//! `f64` gradient-verification path.

pub mod activation;
pub mod batchnorm;
pub mod bilinear;
pub mod conv;
pub mod dense;
pub mod init;
pub mod ops;
pub mod pool;
pub mod rng;
pub mod scalar;

pub use scalar::Scalar;
