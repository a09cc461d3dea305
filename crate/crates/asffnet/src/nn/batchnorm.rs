//! Batch normalization over NCHW activations (per-channel statistics).
//!
//! The hot loops run over contiguous (n, c) planes: one accumulation
//! pass for the statistics, one write pass for the outputs.

use ndarray::{Array1, Array4};

use super::scalar::Scalar;

/// Values saved by the training forward pass for the backward pass.
pub struct BatchNormCache<F: Scalar> {
    pub xhat: Array4<F>,
    pub inv_std: Array1<F>,
}

pub struct BatchNormGrads<F: Scalar> {
    pub dx: Array4<F>,
    pub dgamma: Array1<F>,
    pub dbeta: Array1<F>,
}

/// Training-mode forward: normalizes with batch statistics and updates the
/// running mean/variance in place (running variance stores the unbiased
/// estimate, normalization uses the biased one).
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward_train<F: Scalar>(
    x: &Array4<F>,
    gamma: &Array1<F>,
    beta: &Array1<F>,
    running_mean: &mut Array1<F>,
    running_var: &mut Array1<F>,
    momentum: F,
    eps: F,
) -> (Array4<F>, BatchNormCache<F>) {
    let (n, c, h, w) = x.dim();
    let plane = h * w;
    let m = F::from_usize(n * plane);
    let xs = x.as_slice().expect("input is standard layout");

    let mut sum = vec![F::zero(); c];
    let mut sumsq = vec![F::zero(); c];
    for i in 0..n {
        for ch in 0..c {
            let s = &xs[(i * c + ch) * plane..(i * c + ch + 1) * plane];
            let (mut acc, mut acc2) = (F::zero(), F::zero());
            for &v in s {
                acc += v;
                acc2 += v * v;
            }
            sum[ch] += acc;
            sumsq[ch] += acc2;
        }
    }

    let mut mean = Array1::<F>::zeros(c);
    let mut inv_std = Array1::<F>::zeros(c);
    let mut var = vec![F::zero(); c];
    for ch in 0..c {
        let mu = sum[ch] / m;
        let v = (sumsq[ch] / m - mu * mu).max(F::zero());
        mean[ch] = mu;
        var[ch] = v;
        inv_std[ch] = F::one() / (v + eps).sqrt();
    }

    let mut xhat = Array4::<F>::zeros((n, c, h, w));
    let mut y = Array4::<F>::zeros((n, c, h, w));
    {
        let xh = xhat.as_slice_mut().expect("standard layout");
        let ys = y.as_slice_mut().expect("standard layout");
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * plane;
                let (mu, inv, g, b) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
                for k in base..base + plane {
                    let norm = (xs[k] - mu) * inv;
                    xh[k] = norm;
                    ys[k] = norm * g + b;
                }
            }
        }
    }

    // unbiased variance for the running estimate
    let unbias = if n * plane > 1 {
        m / (m - F::one())
    } else {
        F::one()
    };
    for ch in 0..c {
        running_mean[ch] = (F::one() - momentum) * running_mean[ch] + momentum * mean[ch];
        running_var[ch] = (F::one() - momentum) * running_var[ch] + momentum * var[ch] * unbias;
    }

    (y, BatchNormCache { xhat, inv_std })
}

/// Inference-mode forward using the running statistics.
pub fn batchnorm_forward_eval<F: Scalar>(
    x: &Array4<F>,
    gamma: &Array1<F>,
    beta: &Array1<F>,
    running_mean: &Array1<F>,
    running_var: &Array1<F>,
    eps: F,
) -> Array4<F> {
    let (_, c, _, _) = x.dim();
    let mut y = x.clone();
    for ch in 0..c {
        let inv = F::one() / (running_var[ch] + eps).sqrt();
        let (g, b, mu) = (gamma[ch], beta[ch], running_mean[ch]);
        y.index_axis_mut(ndarray::Axis(1), ch)
            .mapv_inplace(|v| (v - mu) * inv * g + b);
    }
    y
}

pub fn batchnorm_backward<F: Scalar>(
    cache: &BatchNormCache<F>,
    gamma: &Array1<F>,
    dy: &Array4<F>,
) -> BatchNormGrads<F> {
    let (n, c, h, w) = dy.dim();
    let plane = h * w;
    let m = F::from_usize(n * plane);
    let dys = dy.as_slice().expect("standard layout");
    let xh = cache.xhat.as_slice().expect("standard layout");

    let mut dbeta = Array1::<F>::zeros(c);
    let mut dgamma = Array1::<F>::zeros(c);
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * plane;
            let (mut db, mut dg) = (F::zero(), F::zero());
            for k in base..base + plane {
                db += dys[k];
                dg += dys[k] * xh[k];
            }
            dbeta[ch] += db;
            dgamma[ch] += dg;
        }
    }

    // dx = (inv_std * gamma / m) * (m*dy - dbeta - xhat * dgamma)
    let mut dx = Array4::<F>::zeros((n, c, h, w));
    {
        let dxs = dx.as_slice_mut().expect("standard layout");
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * plane;
                let scale = cache.inv_std[ch] * gamma[ch] / m;
                let (db, dg) = (dbeta[ch], dgamma[ch]);
                for k in base..base + plane {
                    dxs[k] = scale * (m * dys[k] - db - xh[k] * dg);
                }
            }
        }
    }

    BatchNormGrads { dx, dgamma, dbeta }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::stream;
    use ndarray::Axis;
    use rand::Rng;

    fn channel_mean(x: &Array4<f64>) -> Array1<f64> {
        let (n, _, h, w) = x.dim();
        let m = (n * h * w) as f64;
        x.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0)) / m
    }

    fn setup() -> (Array4<f64>, Array1<f64>, Array1<f64>) {
        let mut rng = stream(9, "bn-test", &[]);
        let x = Array4::from_shape_simple_fn((3, 2, 4, 4), || rng.random_range(-2.0..2.0));
        let gamma = Array1::from_shape_simple_fn(2, || rng.random_range(0.5..1.5));
        let beta = Array1::from_shape_simple_fn(2, || rng.random_range(-0.5..0.5));
        (x, gamma, beta)
    }

    fn fwd(x: &Array4<f64>, gamma: &Array1<f64>, beta: &Array1<f64>) -> Array4<f64> {
        let mut rm = Array1::zeros(2);
        let mut rv = Array1::ones(2);
        batchnorm_forward_train(x, gamma, beta, &mut rm, &mut rv, 0.1, 1e-5).0
    }

    #[test]
    fn train_forward_normalizes_channels() {
        let (x, _, _) = setup();
        let gamma = Array1::ones(2);
        let beta = Array1::zeros(2);
        let y = fwd(&x, &gamma, &beta);
        let mean = channel_mean(&y);
        let var = channel_mean(&y.mapv(|v| v * v));
        for ch in 0..2 {
            assert!(mean[ch].abs() < 1e-12);
            assert!((var[ch] - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (x, gamma, beta) = setup();
        let mut rng = stream(10, "bn-test-dy", &[]);
        let dy = Array4::from_shape_simple_fn((3, 2, 4, 4), || rng.random_range(-1.0..1.0));
        let loss = |x: &Array4<f64>, g: &Array1<f64>, b: &Array1<f64>| (&fwd(x, g, b) * &dy).sum();

        let mut rm = Array1::zeros(2);
        let mut rv = Array1::ones(2);
        let (_, cache) = batchnorm_forward_train(&x, &gamma, &beta, &mut rm, &mut rv, 0.1, 1e-5);
        let grads = batchnorm_backward(&cache, &gamma, &dy);

        let eps = 1e-6;
        let mut xp = x.clone();
        for idx in [[0, 0, 0, 0], [2, 1, 3, 3], [1, 0, 2, 1]] {
            xp[idx] += eps;
            let up = loss(&xp, &gamma, &beta);
            xp[idx] -= 2.0 * eps;
            let dn = loss(&xp, &gamma, &beta);
            xp[idx] += eps;
            let fd = (up - dn) / (2.0 * eps);
            assert!(
                (fd - grads.dx[idx]).abs() < 1e-6,
                "dx {fd} vs {}",
                grads.dx[idx]
            );
        }

        for ch in 0..2 {
            let mut gp = gamma.clone();
            gp[ch] += eps;
            let up = loss(&x, &gp, &beta);
            gp[ch] -= 2.0 * eps;
            let dn = loss(&x, &gp, &beta);
            let fd = (up - dn) / (2.0 * eps);
            assert!((fd - grads.dgamma[ch]).abs() < 1e-6);

            let mut bp = beta.clone();
            bp[ch] += eps;
            let up = loss(&x, &gamma, &bp);
            bp[ch] -= 2.0 * eps;
            let dn = loss(&x, &gamma, &bp);
            let fd = (up - dn) / (2.0 * eps);
            assert!((fd - grads.dbeta[ch]).abs() < 1e-6);
        }
    }

    #[test]
    fn eval_uses_running_statistics() {
        let (x, gamma, beta) = setup();
        let mut rm = Array1::zeros(2);
        let mut rv = Array1::ones(2);
        // run train mode a few times so running stats move toward batch stats
        for _ in 0..200 {
            batchnorm_forward_train(&x, &gamma, &beta, &mut rm, &mut rv, 0.1, 1e-5);
        }
        let y_eval = batchnorm_forward_eval(&x, &gamma, &beta, &rm, &rv, 1e-5);
        let y_train = fwd(&x, &gamma, &beta);
        // biased vs unbiased variance makes these close, not equal
        let max_diff = (&y_eval - &y_train)
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(max_diff < 0.05, "max diff {max_diff}");
    }
}
