//! Bilinear spatial resizing with half-pixel centers.

use ndarray::Array4;

use super::scalar::Scalar;

/// Per-output-index source taps: (lo, hi, weight_lo, weight_hi).
fn axis_taps<F: Scalar>(in_len: usize, out_len: usize) -> Vec<(usize, usize, F, F)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (s.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            let frac = s - lo as f64;
            (lo, hi, F::from_f64(1.0 - frac), F::from_f64(frac))
        })
        .collect()
}

pub fn bilinear_resize<F: Scalar>(x: &Array4<F>, out_h: usize, out_w: usize) -> Array4<F> {
    let (n, c, h, w) = x.dim();
    if (h, w) == (out_h, out_w) {
        return x.clone();
    }
    let taps_h = axis_taps::<F>(h, out_h);
    let taps_w = axis_taps::<F>(w, out_w);
    let mut y = Array4::<F>::zeros((n, c, out_h, out_w));
    for i in 0..n {
        for ch in 0..c {
            for (oh, &(h0, h1, wh0, wh1)) in taps_h.iter().enumerate() {
                for (ow, &(w0, w1, ww0, ww1)) in taps_w.iter().enumerate() {
                    y[[i, ch, oh, ow]] = wh0 * ww0 * x[[i, ch, h0, w0]]
                        + wh0 * ww1 * x[[i, ch, h0, w1]]
                        + wh1 * ww0 * x[[i, ch, h1, w0]]
                        + wh1 * ww1 * x[[i, ch, h1, w1]];
                }
            }
        }
    }
    y
}

/// Adjoint of [`bilinear_resize`]: scatters output gradients back onto the
/// input grid with the same interpolation weights.
pub fn bilinear_resize_backward<F: Scalar>(
    dy: &Array4<F>,
    in_h: usize,
    in_w: usize,
) -> Array4<F> {
    let (n, c, out_h, out_w) = dy.dim();
    if (in_h, in_w) == (out_h, out_w) {
        return dy.clone();
    }
    let taps_h = axis_taps::<F>(in_h, out_h);
    let taps_w = axis_taps::<F>(in_w, out_w);
    let mut dx = Array4::<F>::zeros((n, c, in_h, in_w));
    for i in 0..n {
        for ch in 0..c {
            for (oh, &(h0, h1, wh0, wh1)) in taps_h.iter().enumerate() {
                for (ow, &(w0, w1, ww0, ww1)) in taps_w.iter().enumerate() {
                    let g = dy[[i, ch, oh, ow]];
                    dx[[i, ch, h0, w0]] += wh0 * ww0 * g;
                    dx[[i, ch, h0, w1]] += wh0 * ww1 * g;
                    dx[[i, ch, h1, w0]] += wh1 * ww0 * g;
                    dx[[i, ch, h1, w1]] += wh1 * ww1 * g;
                }
            }
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
    fn constant_input_resizes_to_same_constant() {
        let x = Array4::from_elem((1, 1, 2, 2), 3.25f64);
        let y = bilinear_resize(&x, 4, 4);
        assert_eq!(y.dim(), (1, 1, 4, 4));
        for &v in y.iter() {
            assert!((v - 3.25).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_preserves_mean() {
        // half-pixel taps weight every source pixel equally under 2x
        let mut rng = stream(6, "bilinear-test", &[]);
        let x = Array4::from_shape_simple_fn((1, 2, 3, 3), || rng.random_range(-1.0..1.0f64));
        let y = bilinear_resize(&x, 6, 6);
        let mx = x.sum() / 18.0;
        let my = y.sum() / 72.0;
        assert!((mx - my).abs() < 1e-12);
    }

    #[test]
    fn backward_is_the_adjoint() {
        // <resize(x), dy> == <x, resize_backward(dy)> for the linear map
        let mut rng = stream(7, "bilinear-adj", &[]);
        let x = Array4::from_shape_simple_fn((2, 1, 3, 4), || rng.random_range(-1.0..1.0f64));
        let dy = Array4::from_shape_simple_fn((2, 1, 7, 5), || rng.random_range(-1.0..1.0f64));
        let lhs = (&bilinear_resize(&x, 7, 5) * &dy).sum();
        let rhs = (&x * &bilinear_resize_backward(&dy, 3, 4)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
