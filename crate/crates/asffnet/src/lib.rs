//! Adaptive spatial feature fusion (ASFF) on residual CNN backbones.
//!
//! This crate implements, from scratch on top of `ndarray`:
//!
//! - the ASFF fusion mathematics (feature resampling, adaptive gate and
//!   simplex weight generation, weighted fusion) in [`fusion`],
//! - a small CNN layer library with explicit forward/backward passes in
//!   [`nn`],
//! - baseline classifiers (LeNet-5, VGG-16, ResNet-34/50/101) and the
//!   gated dual-branch ASFF ResNet-50 in [`backbones`],
//! - dataset loading, stratified splitting, and a synthetic multi-scale
//!   image generator in [`data`],
//! - SGD/Adam training with checkpoints and per-epoch history in
//!   [`train`],
//! - confusion-matrix metrics plus PR/ROC curves with AUC in [`eval`],
//! - Grad-CAM heatmaps and overlays in [`gradcam`].
//!
//! Everything is CPU-only and deterministic given a seed: the same seed,
//! config, and data produce bit-identical parameters, histories, and
//! artifacts in the same environment.
//!
//! Layer math is generic over [`Scalar`] (`f32` or `f64`). Training runs
//! at `f32`; gradient-verification tests instantiate the same kernels at
//! `f64`.

pub mod backbones;
pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gradcam;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
pub use nn::scalar::Scalar;
