//! Batched fusion math on NCHW tensors.
//!
//! These free functions carry the full forward/backward arithmetic for
//! the dual-branch fusion block: channel projection of the resampled
//! deep branch, the gate generator (GAP → dense+ReLU → dense+softmax),
//! and the gated blend itself. The backbone's fusion head and the
//! single-sample API in the parent module both call into here.

use ndarray::{Array1, Array2, Array4};

use crate::nn::activation::{relu2, relu2_backward, softmax_rows, softmax_rows_backward};
use crate::nn::bilinear::{bilinear_resize, bilinear_resize_backward};
use crate::nn::conv::{conv2d_backward, conv2d_forward};
use crate::nn::dense::{dense_backward, dense_forward};
use crate::nn::ops::{concat_channels, split_channels};
use crate::nn::pool::{global_avg_pool, global_avg_pool_backward};
use crate::nn::Scalar;

/// Bilinear resize to (out_h, out_w) followed by a 1×1 convolution that
/// maps `in_c` to `out_c` channels. `proj_w` is (out_c, in_c).
pub fn resample_forward<F: Scalar>(
    x: &Array4<F>,
    out_h: usize,
    out_w: usize,
    proj_w: &Array2<F>,
    proj_b: &Array1<F>,
) -> (Array4<F>, Array4<F>) {
    let resized = bilinear_resize(x, out_h, out_w);
    let (out_c, in_c) = proj_w.dim();
    let w4 = proj_w
        .view()
        .into_shape_with_order((out_c, in_c, 1, 1))
        .expect("projection weight layout");
    let y = conv2d_forward(&resized, &w4.to_owned(), Some(proj_b), 1, 0);
    (y, resized)
}

pub struct ResampleGrads<F: Scalar> {
    pub dx: Array4<F>,
    pub dw: Array2<F>,
    pub db: Array1<F>,
}

pub fn resample_backward<F: Scalar>(
    resized: &Array4<F>,
    in_h: usize,
    in_w: usize,
    proj_w: &Array2<F>,
    dy: &Array4<F>,
) -> ResampleGrads<F> {
    let (out_c, in_c) = proj_w.dim();
    let w4 = proj_w
        .view()
        .into_shape_with_order((out_c, in_c, 1, 1))
        .expect("projection weight layout")
        .to_owned();
    let grads = conv2d_backward(resized, &w4, 1, 0, dy, true);
    let dresized = grads.dx.expect("dx requested");
    let dx = bilinear_resize_backward(&dresized, in_h, in_w);
    let dw = grads
        .dw
        .into_shape_with_order((out_c, in_c))
        .expect("dw layout");
    ResampleGrads {
        dx,
        dw,
        db: grads.db,
    }
}

/// Intermediate activations of the gate generator, kept for backward.
pub struct GateCache<F: Scalar> {
    pub concat: Array4<F>,
    pub pooled: Array2<F>,
    pub hidden: Array2<F>,
    pub probs: Array2<F>,
}

/// Gate generator: concat(F1, F2) → GAP → dense(reduction, ReLU) →
/// dense(2, softmax). Returns per-sample (ω, 1−ω) rows.
#[allow(clippy::too_many_arguments)]
pub fn gate_forward<F: Scalar>(
    f1: &Array4<F>,
    f2: &Array4<F>,
    w1: &Array2<F>,
    b1: &Array1<F>,
    w2: &Array2<F>,
    b2: &Array1<F>,
) -> GateCache<F> {
    let concat = concat_channels(f1, f2);
    let pooled = global_avg_pool(&concat);
    let hidden = relu2(&dense_forward(&pooled, w1, b1));
    let probs = softmax_rows(&dense_forward(&hidden, w2, b2));
    GateCache {
        concat,
        pooled,
        hidden,
        probs,
    }
}

pub struct GateGrads<F: Scalar> {
    pub df1: Array4<F>,
    pub df2: Array4<F>,
    pub dw1: Array2<F>,
    pub db1: Array1<F>,
    pub dw2: Array2<F>,
    pub db2: Array1<F>,
}

/// Backward through the gate generator given dL/dprobs.
pub fn gate_backward<F: Scalar>(
    cache: &GateCache<F>,
    w1: &Array2<F>,
    w2: &Array2<F>,
    c1: usize,
    dprobs: &Array2<F>,
) -> GateGrads<F> {
    let dlogits = softmax_rows_backward(&cache.probs, dprobs);
    let g2 = dense_backward(&cache.hidden, w2, &dlogits);
    let dhidden = relu2_backward(&cache.hidden, &g2.dx);
    let g1 = dense_backward(&cache.pooled, w1, &dhidden);
    let dconcat = global_avg_pool_backward(&g1.dx, cache.concat.dim());
    let (df1, df2) = split_channels(&dconcat, c1);
    GateGrads {
        df1,
        df2,
        dw1: g1.dw,
        db1: g1.db,
        dw2: g2.dw,
        db2: g2.db,
    }
}

/// Gated blend: y_n = p_n0 · f1_n + p_n1 · f2_n with per-sample probs.
pub fn fuse_dual_forward<F: Scalar>(
    f1: &Array4<F>,
    f2: &Array4<F>,
    probs: &Array2<F>,
) -> Array4<F> {
    let n = f1.dim().0;
    let mut y = Array4::<F>::zeros(f1.dim());
    for i in 0..n {
        let (w1, w2) = (probs[[i, 0]], probs[[i, 1]]);
        let mut yi = y.index_axis_mut(ndarray::Axis(0), i);
        yi.assign(&f1.index_axis(ndarray::Axis(0), i));
        yi.mapv_inplace(|v| v * w1);
        yi.scaled_add(w2, &f2.index_axis(ndarray::Axis(0), i));
    }
    y
}

pub struct FuseDualGrads<F: Scalar> {
    pub df1: Array4<F>,
    pub df2: Array4<F>,
    pub dprobs: Array2<F>,
}

pub fn fuse_dual_backward<F: Scalar>(
    f1: &Array4<F>,
    f2: &Array4<F>,
    probs: &Array2<F>,
    dy: &Array4<F>,
) -> FuseDualGrads<F> {
    let n = f1.dim().0;
    let mut df1 = Array4::<F>::zeros(f1.dim());
    let mut df2 = Array4::<F>::zeros(f2.dim());
    let mut dprobs = Array2::<F>::zeros((n, 2));
    for i in 0..n {
        let dyi = dy.index_axis(ndarray::Axis(0), i);
        let f1i = f1.index_axis(ndarray::Axis(0), i);
        let f2i = f2.index_axis(ndarray::Axis(0), i);
        dprobs[[i, 0]] = (&dyi * &f1i).sum();
        dprobs[[i, 1]] = (&dyi * &f2i).sum();
        let (w1, w2) = (probs[[i, 0]], probs[[i, 1]]);
        df1.index_axis_mut(ndarray::Axis(0), i)
            .assign(&dyi.mapv(|v| v * w1));
        df2.index_axis_mut(ndarray::Axis(0), i)
            .assign(&dyi.mapv(|v| v * w2));
    }
    FuseDualGrads { df1, df2, dprobs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::stream;
    use rand::Rng;

    fn rand4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = stream(seed, "fusion-ops", &[]);
        Array4::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn fuse_dual_vertex_weights_select_one_branch() {
        let f1 = rand4((2, 3, 4, 4), 1);
        let f2 = rand4((2, 3, 4, 4), 2);
        let mut probs = Array2::<f64>::zeros((2, 2));
        probs[[0, 0]] = 1.0; // sample 0 fully on f1
        probs[[1, 1]] = 1.0; // sample 1 fully on f2
        let y = fuse_dual_forward(&f1, &f2, &probs);
        assert_eq!(
            y.index_axis(ndarray::Axis(0), 0),
            f1.index_axis(ndarray::Axis(0), 0)
        );
        assert_eq!(
            y.index_axis(ndarray::Axis(0), 1),
            f2.index_axis(ndarray::Axis(0), 1)
        );
    }

    #[test]
    fn fuse_dual_backward_matches_finite_differences() {
        let f1 = rand4((1, 2, 3, 3), 3);
        let f2 = rand4((1, 2, 3, 3), 4);
        let probs = Array2::from_shape_vec((1, 2), vec![0.3, 0.7]).unwrap();
        let dy = rand4((1, 2, 3, 3), 5);
        let grads = fuse_dual_backward(&f1, &f2, &probs, &dy);
        let eps = 1e-6;

        let mut fp = f1.clone();
        fp[[0, 1, 2, 2]] += eps;
        let up = (&fuse_dual_forward(&fp, &f2, &probs) * &dy).sum();
        fp[[0, 1, 2, 2]] -= 2.0 * eps;
        let dn = (&fuse_dual_forward(&fp, &f2, &probs) * &dy).sum();
        assert!(((up - dn) / (2.0 * eps) - grads.df1[[0, 1, 2, 2]]).abs() < 1e-9);

        let mut pp = probs.clone();
        pp[[0, 0]] += eps;
        let up = (&fuse_dual_forward(&f1, &f2, &pp) * &dy).sum();
        pp[[0, 0]] -= 2.0 * eps;
        let dn = (&fuse_dual_forward(&f1, &f2, &pp) * &dy).sum();
        assert!(((up - dn) / (2.0 * eps) - grads.dprobs[[0, 0]]).abs() < 1e-9);
    }

    #[test]
    fn gate_zero_weights_give_half() {
        let f1 = rand4((3, 2, 4, 4), 6);
        let f2 = rand4((3, 2, 4, 4), 7);
        let w1 = Array2::<f64>::zeros((4, 8));
        let b1 = Array1::<f64>::zeros(8);
        let w2 = Array2::<f64>::zeros((8, 2));
        let b2 = Array1::<f64>::zeros(2);
        let cache = gate_forward(&f1, &f2, &w1, &b1, &w2, &b2);
        for i in 0..3 {
            assert!((cache.probs[[i, 0]] - 0.5).abs() < 1e-12);
            assert!((cache.probs[[i, 1]] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_identity_projection_returns_resized_input() {
        let x = rand4((1, 3, 2, 2), 8);
        let mut w = Array2::<f64>::zeros((3, 3));
        for c in 0..3 {
            w[[c, c]] = 1.0;
        }
        let b = Array1::<f64>::zeros(3);
        let (y, resized) = resample_forward(&x, 4, 4, &w, &b);
        assert_eq!(y, resized);
    }
}
