//! Fully connected layer kernels.

use ndarray::{linalg::general_mat_mul, Array1, Array2, Axis};

use super::scalar::Scalar;

pub struct DenseGrads<F: Scalar> {
    pub dx: Array2<F>,
    pub dw: Array2<F>,
    pub db: Array1<F>,
}

/// y = x·w + b, with x (N, I), w (I, O), b (O).
pub fn dense_forward<F: Scalar>(x: &Array2<F>, w: &Array2<F>, b: &Array1<F>) -> Array2<F> {
    let (n, _) = x.dim();
    let (_, o) = w.dim();
    let mut y = Array2::<F>::zeros((n, o));
    general_mat_mul(F::one(), x, w, F::zero(), &mut y);
    y += &b.view().insert_axis(Axis(0));
    y
}

pub fn dense_backward<F: Scalar>(x: &Array2<F>, w: &Array2<F>, dy: &Array2<F>) -> DenseGrads<F> {
    let mut dw = Array2::<F>::zeros(w.dim());
    general_mat_mul(F::one(), &x.t(), dy, F::zero(), &mut dw);
    let db = dy.sum_axis(Axis(0));
    let mut dx = Array2::<F>::zeros(x.dim());
    general_mat_mul(F::one(), dy, &w.t(), F::zero(), &mut dx);
    DenseGrads { dx, dw, db }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::stream;
    use rand::Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = stream(5, "dense-test", &[]);
        let x = Array2::from_shape_simple_fn((3, 4), || rng.random_range(-1.0..1.0f64));
        let w = Array2::from_shape_simple_fn((4, 2), || rng.random_range(-1.0..1.0f64));
        let b = Array1::from_shape_simple_fn(2, || rng.random_range(-1.0..1.0f64));
        let dy = Array2::from_shape_simple_fn((3, 2), || rng.random_range(-1.0..1.0f64));
        let loss = |x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>| {
            (&dense_forward(x, w, b) * &dy).sum()
        };
        let grads = dense_backward(&x, &w, &dy);
        let eps = 1e-6;

        let mut wp = w.clone();
        wp[[1, 1]] += eps;
        let up = loss(&x, &wp, &b);
        wp[[1, 1]] -= 2.0 * eps;
        let dn = loss(&x, &wp, &b);
        assert!(((up - dn) / (2.0 * eps) - grads.dw[[1, 1]]).abs() < 1e-8);

        let mut xp = x.clone();
        xp[[2, 3]] += eps;
        let up = loss(&xp, &w, &b);
        xp[[2, 3]] -= 2.0 * eps;
        let dn = loss(&xp, &w, &b);
        assert!(((up - dn) / (2.0 * eps) - grads.dx[[2, 3]]).abs() < 1e-8);

        let mut bp = b.clone();
        bp[0] += eps;
        let up = loss(&x, &w, &bp);
        bp[0] -= 2.0 * eps;
        let dn = loss(&x, &w, &bp);
        assert!(((up - dn) / (2.0 * eps) - grads.db[0]).abs() < 1e-8);
    }
}
