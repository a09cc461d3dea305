//! Parameter initialization.
//!
//! Convolutions and dense layers use He-uniform (fan-in) initialization;
//! biases start at zero. Draws are made in `f64` and converted, so the
//! draw sequence is identical across element types.

use ndarray::{Array, Dimension, ShapeBuilder};
use rand::Rng;

use super::scalar::Scalar;

/// He-uniform: U(-b, b) with b = sqrt(6 / fan_in).
pub fn he_uniform<F: Scalar, D: Dimension, Sh: ShapeBuilder<Dim = D>>(
    shape: Sh,
    fan_in: usize,
    rng: &mut impl Rng,
) -> Array<F, D> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Array::from_shape_simple_fn(shape, || {
        F::from_f64(rng.random_range(-bound..bound))
    })
}

/// U(-b, b) with an explicit bound.
pub fn uniform<F: Scalar, D: Dimension, Sh: ShapeBuilder<Dim = D>>(
    shape: Sh,
    bound: f64,
    rng: &mut impl Rng,
) -> Array<F, D> {
    Array::from_shape_simple_fn(shape, || {
        F::from_f64(rng.random_range(-bound..bound))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::stream;

    #[test]
    fn he_uniform_respects_bound() {
        let mut rng = stream(3, "init", &[]);
        let w: ndarray::Array2<f32> = he_uniform((64, 9), 9, &mut rng);
        let bound = (6.0f32 / 9.0).sqrt();
        assert!(w.iter().all(|v| v.abs() < bound));
        // not degenerate
        assert!(w.iter().any(|v| v.abs() > 1e-3));
    }
}
