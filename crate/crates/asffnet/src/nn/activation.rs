//! Activations, row softmax, and the softmax cross-entropy loss.

use ndarray::{Array2, Array4, Axis};

use super::scalar::Scalar;

pub fn relu<F: Scalar>(x: &Array4<F>) -> Array4<F> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

/// Backward through ReLU given the forward *output* (mask y > 0).
pub fn relu_backward<F: Scalar>(y: &Array4<F>, dy: &Array4<F>) -> Array4<F> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &v| {
        if v <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}

pub fn relu2<F: Scalar>(x: &Array2<F>) -> Array2<F> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

pub fn relu2_backward<F: Scalar>(y: &Array2<F>, dy: &Array2<F>) -> Array2<F> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &v| {
        if v <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}

/// Numerically stable row-wise softmax of (N, K) logits.
pub fn softmax_rows<F: Scalar>(logits: &Array2<F>) -> Array2<F> {
    let mut p = logits.clone();
    for mut row in p.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    p
}

/// Backward through row softmax: dx = p ⊙ (dy − ⟨dy, p⟩ per row).
pub fn softmax_rows_backward<F: Scalar>(p: &Array2<F>, dy: &Array2<F>) -> Array2<F> {
    let dot = (dy * p).sum_axis(Axis(1));
    let mut dx = dy.clone();
    for (mut row, (&d, prow)) in dx
        .axis_iter_mut(Axis(0))
        .zip(dot.iter().zip(p.axis_iter(Axis(0))))
    {
        row.zip_mut_with(&prow, |g, &pv| *g = pv * (*g - d));
    }
    dx
}

/// Mean cross-entropy of softmax(logits) against integer labels.
///
/// Returns the loss and the gradient w.r.t. the logits, (p − onehot)/N.
pub fn cross_entropy_loss<F: Scalar>(
    logits: &Array2<F>,
    labels: &[usize],
) -> (F, Array2<F>) {
    let (n, k) = logits.dim();
    assert_eq!(n, labels.len(), "logits rows vs labels length");
    let p = softmax_rows(logits);
    let tiny = F::from_f64(1e-12);
    let mut loss = F::zero();
    let mut dlogits = p.clone();
    let inv_n = F::one() / F::from_usize(n);
    for (i, &y) in labels.iter().enumerate() {
        assert!(y < k, "label {y} out of range for {k} classes");
        loss -= (p[[i, y]] + tiny).ln();
        dlogits[[i, y]] -= F::one();
    }
    dlogits.mapv_inplace(|v| v * inv_n);
    (loss * inv_n, dlogits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::stream;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut rng = stream(1, "act-test", &[]);
        let x = Array2::from_shape_simple_fn((5, 3), || rng.random_range(-4.0..4.0f64));
        let p = softmax_rows(&x);
        for row in p.axis_iter(Axis(0)) {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        let shifted = &x + 7.5;
        let q = softmax_rows(&shifted);
        for (a, b) in p.iter().zip(q.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = stream(2, "act-test-ce", &[]);
        let x = Array2::from_shape_simple_fn((4, 2), || rng.random_range(-2.0..2.0f64));
        let labels = vec![0usize, 1, 1, 0];
        let (_, grad) = cross_entropy_loss(&x, &labels);
        let eps = 1e-6;
        let mut xp = x.clone();
        for i in 0..4 {
            for j in 0..2 {
                xp[[i, j]] += eps;
                let (up, _) = cross_entropy_loss(&xp, &labels);
                xp[[i, j]] -= 2.0 * eps;
                let (dn, _) = cross_entropy_loss(&xp, &labels);
                xp[[i, j]] += eps;
                let fd = (up - dn) / (2.0 * eps);
                assert!((fd - grad[[i, j]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let mut rng = stream(4, "act-test-sm", &[]);
        let x = Array2::from_shape_simple_fn((3, 4), || rng.random_range(-2.0..2.0f64));
        let dy = Array2::from_shape_simple_fn((3, 4), || rng.random_range(-1.0..1.0f64));
        let p = softmax_rows(&x);
        let dx = softmax_rows_backward(&p, &dy);
        let eps = 1e-6;
        let mut xp = x.clone();
        for i in 0..3 {
            for j in 0..4 {
                xp[[i, j]] += eps;
                let up = (&softmax_rows(&xp) * &dy).sum();
                xp[[i, j]] -= 2.0 * eps;
                let dn = (&softmax_rows(&xp) * &dy).sum();
                xp[[i, j]] += eps;
                let fd = (up - dn) / (2.0 * eps);
                assert!((fd - dx[[i, j]]).abs() < 1e-8);
            }
        }
    }
}
