//! Max pooling and global average pooling.

use ndarray::{Array2, Array4, Axis};

use super::scalar::Scalar;
use super::conv::conv2d_out_dim;

pub struct MaxPoolCache {
    /// Flat (h*w) input index of the winning element per output position,
    /// laid out like the output tensor.
    pub argmax: Vec<usize>,
    pub input_dim: (usize, usize, usize, usize),
}

pub fn maxpool_forward<F: Scalar>(
    x: &Array4<F>,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> (Array4<F>, MaxPoolCache) {
    let (n, c, h, w) = x.dim();
    let ho = conv2d_out_dim(h, kernel, stride, pad);
    let wo = conv2d_out_dim(w, kernel, stride, pad);
    let mut y = Array4::<F>::zeros((n, c, ho, wo));
    let mut argmax = vec![0usize; n * c * ho * wo];

    let xs = x.as_slice().expect("input is standard layout");
    let plane = h * w;
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * plane;
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut best = F::neg_infinity();
                    let mut best_idx = 0usize;
                    for ki in 0..kernel {
                        let ih = (oh * stride + ki) as isize - pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        for kj in 0..kernel {
                            let iw = (ow * stride + kj) as isize - pad as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            let idx = ih as usize * w + iw as usize;
                            let v = xs[base + idx];
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    y[[i, ch, oh, ow]] = best;
                    argmax[((i * c + ch) * ho + oh) * wo + ow] = best_idx;
                }
            }
        }
    }
    (
        y,
        MaxPoolCache {
            argmax,
            input_dim: (n, c, h, w),
        },
    )
}

pub fn maxpool_backward<F: Scalar>(cache: &MaxPoolCache, dy: &Array4<F>) -> Array4<F> {
    let (n, c, h, w) = cache.input_dim;
    let (_, _, ho, wo) = dy.dim();
    let mut dx = Array4::<F>::zeros((n, c, h, w));
    let dxs = dx.as_slice_mut().expect("dx is standard layout");
    let dys = dy.as_slice().expect("dy is standard layout");
    let plane = h * w;
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * plane;
            for oh in 0..ho {
                for ow in 0..wo {
                    let out_idx = ((i * c + ch) * ho + oh) * wo + ow;
                    dxs[base + cache.argmax[out_idx]] += dys[out_idx];
                }
            }
        }
    }
    dx
}

/// Spatial mean per channel: (N, C, H, W) -> (N, C).
pub fn global_avg_pool<F: Scalar>(x: &Array4<F>) -> Array2<F> {
    let (_, _, h, w) = x.dim();
    let m = F::from_usize(h * w);
    x.sum_axis(Axis(3)).sum_axis(Axis(2)) / m
}

pub fn global_avg_pool_backward<F: Scalar>(
    dy: &Array2<F>,
    input_dim: (usize, usize, usize, usize),
) -> Array4<F> {
    let (n, c, h, w) = input_dim;
    let m = F::from_usize(h * w);
    let mut dx = Array4::<F>::zeros((n, c, h, w));
    for i in 0..n {
        for ch in 0..c {
            let g = dy[[i, ch]] / m;
            dx.index_axis_mut(Axis(0), i)
                .index_axis_mut(Axis(0), ch)
                .fill(g);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::stream;
    use rand::Rng;

    #[test]
    fn maxpool_forward_and_backward_roundtrip() {
        let mut rng = stream(3, "pool-test", &[]);
        let x = Array4::from_shape_simple_fn((2, 2, 6, 6), || rng.random_range(-1.0..1.0f64));
        let (y, cache) = maxpool_forward(&x, 2, 2, 0);
        assert_eq!(y.dim(), (2, 2, 3, 3));
        // every output is the max of its window
        for i in 0..2 {
            for c in 0..2 {
                for oh in 0..3 {
                    for ow in 0..3 {
                        let mut best = f64::NEG_INFINITY;
                        for ki in 0..2 {
                            for kj in 0..2 {
                                best = best.max(x[[i, c, oh * 2 + ki, ow * 2 + kj]]);
                            }
                        }
                        assert_eq!(y[[i, c, oh, ow]], best);
                    }
                }
            }
        }
        // backward routes gradient only to winners
        let dy = Array4::from_elem((2, 2, 3, 3), 1.0f64);
        let dx = maxpool_backward(&cache, &dy);
        assert_eq!(dx.sum(), 36.0);
        assert!(dx.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn maxpool_padded_ignores_out_of_bounds() {
        // 3x3 kernel stride 2 pad 1 on 4x4, the resnet stem pool
        let x = Array4::from_shape_fn((1, 1, 4, 4), |(_, _, i, j)| (i * 4 + j) as f64);
        let (y, _) = maxpool_forward(&x, 3, 2, 1);
        assert_eq!(y.dim(), (1, 1, 2, 2));
        assert_eq!(y[[0, 0, 0, 0]], 5.0);
        assert_eq!(y[[0, 0, 1, 1]], 15.0);
    }

    #[test]
    fn gap_is_spatial_mean_and_backward_spreads() {
        let x = Array4::from_shape_fn((1, 2, 2, 2), |(_, c, i, j)| (c * 4 + i * 2 + j) as f64);
        let y = global_avg_pool(&x);
        assert_eq!(y[[0, 0]], 1.5);
        assert_eq!(y[[0, 1]], 5.5);
        let dy = Array2::from_elem((1, 2), 4.0f64);
        let dx = global_avg_pool_backward(&dy, (1, 2, 2, 2));
        assert!(dx.iter().all(|&v| v == 1.0));
    }
}
