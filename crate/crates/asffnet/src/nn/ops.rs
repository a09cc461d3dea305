//! Small tensor utilities shared by the fusion ops and the backbones.

use ndarray::{Array4, Axis};

use super::scalar::Scalar;

/// Concatenates two NCHW tensors along the channel axis.
pub fn concat_channels<F: Scalar>(a: &Array4<F>, b: &Array4<F>) -> Array4<F> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("matching non-channel dims")
}

/// Splits a channel-axis gradient back into the two concatenated parts.
pub fn split_channels<F: Scalar>(d: &Array4<F>, c_first: usize) -> (Array4<F>, Array4<F>) {
    let (da, db) = d.view().split_at(Axis(1), c_first);
    (da.to_owned(), db.to_owned())
}

pub fn all_finite<F: Scalar>(iter: impl IntoIterator<Item = F>) -> bool {
    iter.into_iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_roundtrips() {
        let a = Array4::from_shape_fn((1, 2, 2, 2), |(_, c, i, j)| (c * 4 + i * 2 + j) as f32);
        let b = Array4::from_elem((1, 3, 2, 2), -1.0f32);
        let cat = concat_channels(&a, &b);
        assert_eq!(cat.dim(), (1, 5, 2, 2));
        let (ra, rb) = split_channels(&cat, 2);
        assert_eq!(ra, a);
        assert_eq!(rb, b);
    }
}
