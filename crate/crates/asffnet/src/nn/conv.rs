//! 2-D convolution via im2col + GEMM.
//!
//! Layout is NCHW for activations and OCHW for kernels. The column
//! buffer is rebuilt in the backward pass instead of cached, which keeps
//! peak memory at one buffer per layer invocation.

use ndarray::{linalg::general_mat_mul, Array1, Array2, Array4, Axis};

use super::scalar::Scalar;

pub fn conv2d_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

pub struct Conv2dGrads<F: Scalar> {
    /// Gradient w.r.t. the input; `None` when not requested.
    pub dx: Option<Array4<F>>,
    pub dw: Array4<F>,
    pub db: Array1<F>,
}

/// Fills `col` (C*kh*kw, Ho*Wo) from one sample `x` (C, H, W slice).
#[allow(clippy::too_many_arguments)]
fn im2col<F: Scalar>(
    x: &[F],
    col: &mut [F],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) {
    let plane = h * w;
    let out_plane = ho * wo;
    for c in 0..c_in {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let dst = &mut col[row * out_plane..(row + 1) * out_plane];
                for oh in 0..ho {
                    let ih = (oh * stride + ki) as isize - pad as isize;
                    let dst_row = &mut dst[oh * wo..(oh + 1) * wo];
                    if ih < 0 || ih >= h as isize {
                        dst_row.fill(F::zero());
                        continue;
                    }
                    let src_row = &x[c * plane + ih as usize * w..c * plane + (ih as usize + 1) * w];
                    for (ow, d) in dst_row.iter_mut().enumerate() {
                        let iw = (ow * stride + kj) as isize - pad as isize;
                        *d = if iw < 0 || iw >= w as isize {
                            F::zero()
                        } else {
                            src_row[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds `col` (C*kh*kw, Ho*Wo) back into one sample gradient.
#[allow(clippy::too_many_arguments)]
fn col2im<F: Scalar>(
    col: &[F],
    dx: &mut [F],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) {
    let plane = h * w;
    let out_plane = ho * wo;
    for c in 0..c_in {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let src = &col[row * out_plane..(row + 1) * out_plane];
                for oh in 0..ho {
                    let ih = (oh * stride + ki) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let dst_row =
                        &mut dx[c * plane + ih as usize * w..c * plane + (ih as usize + 1) * w];
                    let src_row = &src[oh * wo..(oh + 1) * wo];
                    for (ow, s) in src_row.iter().enumerate() {
                        let iw = (ow * stride + kj) as isize - pad as isize;
                        if iw >= 0 && iw < w as isize {
                            dst_row[iw as usize] += *s;
                        }
                    }
                }
            }
        }
    }
}

fn is_pointwise(kh: usize, kw: usize, stride: usize, pad: usize) -> bool {
    kh == 1 && kw == 1 && stride == 1 && pad == 0
}

pub fn conv2d_forward<F: Scalar>(
    x: &Array4<F>,
    w: &Array4<F>,
    b: Option<&Array1<F>>,
    stride: usize,
    pad: usize,
) -> Array4<F> {
    let (n, c_in, h, wd) = x.dim();
    let (c_out, wc, kh, kw) = w.dim();
    assert_eq!(c_in, wc, "conv2d: input channels {c_in} != kernel channels {wc}");
    let ho = conv2d_out_dim(h, kh, stride, pad);
    let wo = conv2d_out_dim(wd, kw, stride, pad);

    let w_mat = w
        .view()
        .into_shape_with_order((c_out, c_in * kh * kw))
        .expect("kernel is standard layout");
    let mut y = Array4::<F>::zeros((n, c_out, ho, wo));
    let pointwise = is_pointwise(kh, kw, stride, pad);
    let mut col_buf = if pointwise {
        Vec::new()
    } else {
        vec![F::zero(); c_in * kh * kw * ho * wo]
    };

    for i in 0..n {
        let xi = x.index_axis(Axis(0), i);
        let xs = xi.to_slice().expect("input is standard layout");
        let mut yi = y
            .index_axis_mut(Axis(0), i)
            .into_shape_with_order((c_out, ho * wo))
            .expect("output is standard layout");
        if pointwise {
            let col = ndarray::ArrayView2::from_shape((c_in, h * wd), xs)
                .expect("pointwise col view");
            general_mat_mul(F::one(), &w_mat, &col, F::zero(), &mut yi);
        } else {
            im2col(xs, &mut col_buf, c_in, h, wd, kh, kw, stride, pad, ho, wo);
            let col = ndarray::ArrayView2::from_shape((c_in * kh * kw, ho * wo), &col_buf[..])
                .expect("col buffer shape");
            general_mat_mul(F::one(), &w_mat, &col, F::zero(), &mut yi);
        }
    }

    if let Some(b) = b {
        for (o, &bo) in b.iter().enumerate() {
            y.index_axis_mut(Axis(1), o).mapv_inplace(|v| v + bo);
        }
    }
    y
}

pub fn conv2d_backward<F: Scalar>(
    x: &Array4<F>,
    w: &Array4<F>,
    stride: usize,
    pad: usize,
    dy: &Array4<F>,
    need_dx: bool,
) -> Conv2dGrads<F> {
    let (n, c_in, h, wd) = x.dim();
    let (c_out, _, kh, kw) = w.dim();
    let (dn, dc, ho, wo) = dy.dim();
    assert_eq!(n, dn);
    assert_eq!(c_out, dc);

    let ckk = c_in * kh * kw;
    let w_mat = w
        .view()
        .into_shape_with_order((c_out, ckk))
        .expect("kernel is standard layout");
    let mut dw_mat = Array2::<F>::zeros((c_out, ckk));
    let mut dx = if need_dx {
        Some(Array4::<F>::zeros((n, c_in, h, wd)))
    } else {
        None
    };
    let pointwise = is_pointwise(kh, kw, stride, pad);
    let mut col_buf = if pointwise {
        Vec::new()
    } else {
        vec![F::zero(); ckk * ho * wo]
    };
    let mut dcol_buf = if pointwise && !need_dx {
        Vec::new()
    } else {
        vec![F::zero(); ckk * ho * wo]
    };

    for i in 0..n {
        let xi = x.index_axis(Axis(0), i);
        let xs = xi.to_slice().expect("input is standard layout");
        let dyi = dy
            .index_axis(Axis(0), i)
            .into_shape_with_order((c_out, ho * wo))
            .expect("grad is standard layout");

        if pointwise {
            let col = ndarray::ArrayView2::from_shape((c_in, h * wd), xs)
                .expect("pointwise col view");
            general_mat_mul(F::one(), &dyi, &col.t(), F::one(), &mut dw_mat);
            if let Some(dx) = dx.as_mut() {
                let mut dxi = dx
                    .index_axis_mut(Axis(0), i)
                    .into_shape_with_order((c_in, h * wd))
                    .expect("dx is standard layout");
                general_mat_mul(F::one(), &w_mat.t(), &dyi, F::zero(), &mut dxi);
            }
        } else {
            im2col(xs, &mut col_buf, c_in, h, wd, kh, kw, stride, pad, ho, wo);
            let col = ndarray::ArrayView2::from_shape((ckk, ho * wo), &col_buf[..])
                .expect("col buffer shape");
            general_mat_mul(F::one(), &dyi, &col.t(), F::one(), &mut dw_mat);
            if let Some(dx) = dx.as_mut() {
                let mut dcol = ndarray::ArrayViewMut2::from_shape((ckk, ho * wo), &mut dcol_buf[..])
                    .expect("dcol buffer shape");
                general_mat_mul(F::one(), &w_mat.t(), &dyi, F::zero(), &mut dcol);
                let dxi = dx.index_axis_mut(Axis(0), i);
                let dxs = dxi.into_slice().expect("dx is standard layout");
                col2im(&dcol_buf, dxs, c_in, h, wd, kh, kw, stride, pad, ho, wo);
            }
        }
    }

    let db = dy
        .sum_axis(Axis(3))
        .sum_axis(Axis(2))
        .sum_axis(Axis(0));
    let dw = dw_mat
        .into_shape_with_order((c_out, c_in, kh, kw))
        .expect("dw shape");
    Conv2dGrads { dx, dw, db }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::stream;
    use ndarray::{Array1, Array4};
    use rand::Rng;

    /// Direct quadruple-loop convolution, the independent oracle.
    fn conv_naive(
        x: &Array4<f64>,
        w: &Array4<f64>,
        b: Option<&Array1<f64>>,
        stride: usize,
        pad: usize,
    ) -> Array4<f64> {
        let (n, c_in, h, wd) = x.dim();
        let (c_out, _, kh, kw) = w.dim();
        let ho = conv2d_out_dim(h, kh, stride, pad);
        let wo = conv2d_out_dim(wd, kw, stride, pad);
        let mut y = Array4::<f64>::zeros((n, c_out, ho, wo));
        for i in 0..n {
            for o in 0..c_out {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = b.map_or(0.0, |b| b[o]);
                        for c in 0..c_in {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let ih = (oh * stride + ki) as isize - pad as isize;
                                    let iw = (ow * stride + kj) as isize - pad as isize;
                                    if ih >= 0
                                        && iw >= 0
                                        && (ih as usize) < h
                                        && (iw as usize) < wd
                                    {
                                        acc += x[[i, c, ih as usize, iw as usize]]
                                            * w[[o, c, ki, kj]];
                                    }
                                }
                            }
                        }
                        y[[i, o, oh, ow]] = acc;
                    }
                }
            }
        }
        y
    }

    fn rand4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = stream(seed, "conv-test", &[]);
        Array4::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn forward_matches_naive_oracle() {
        for &(stride, pad, k) in &[(1usize, 1usize, 3usize), (2, 1, 3), (1, 0, 1), (2, 3, 7)] {
            let x = rand4((2, 3, 8, 8), 11 + stride as u64 + k as u64);
            let w = rand4((4, 3, k, k), 13 + pad as u64);
            let mut rng = stream(17, "conv-test-b", &[]);
            let b = Array1::from_shape_simple_fn(4, || rng.random_range(-1.0..1.0));
            let got = conv2d_forward(&x, &w, Some(&b), stride, pad);
            let want = conv_naive(&x, &w, Some(&b), stride, pad);
            assert_eq!(got.dim(), want.dim());
            for (g, w) in got.iter().zip(want.iter()) {
                assert!((g - w).abs() < 1e-10, "got {g}, want {w}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = rand4((2, 2, 5, 5), 23);
        let w = rand4((3, 2, 3, 3), 29);
        let dy_shape = conv2d_forward(&x, &w, None, 2, 1).dim();
        let dy = rand4(dy_shape, 31);
        let loss = |x: &Array4<f64>, w: &Array4<f64>| -> f64 {
            let y = conv2d_forward(x, w, None, 2, 1);
            (&y * &dy).sum()
        };
        let grads = conv2d_backward(&x, &w, 2, 1, &dy, true);
        let eps = 1e-6;

        let mut xp = x.clone();
        for idx in [[0, 0, 0, 0], [1, 1, 2, 3], [0, 1, 4, 4]] {
            xp[idx] += eps;
            let up = loss(&xp, &w);
            xp[idx] -= 2.0 * eps;
            let dn = loss(&xp, &w);
            xp[idx] += eps;
            let fd = (up - dn) / (2.0 * eps);
            let an = grads.dx.as_ref().unwrap()[idx];
            assert!((fd - an).abs() < 1e-6, "dx fd {fd} vs {an}");
        }

        let mut wp = w.clone();
        for idx in [[0, 0, 0, 0], [2, 1, 1, 2], [1, 0, 2, 2]] {
            wp[idx] += eps;
            let up = loss(&x, &wp);
            wp[idx] -= 2.0 * eps;
            let dn = loss(&x, &wp);
            wp[idx] += eps;
            let fd = (up - dn) / (2.0 * eps);
            let an = grads.dw[idx];
            assert!((fd - an).abs() < 1e-6, "dw fd {fd} vs {an}");
        }
    }

    #[test]
    fn pointwise_identity_kernel_passes_input_through() {
        let x = rand4((1, 3, 4, 4), 41);
        let mut w = Array4::<f64>::zeros((3, 3, 1, 1));
        for c in 0..3 {
            w[[c, c, 0, 0]] = 1.0;
        }
        let y = conv2d_forward(&x, &w, None, 1, 0);
        assert_eq!(x, y);
    }
}
