//! LeNet-5 adapted to 3-channel inputs of configurable size.

use ndarray::{Array2, Array4};
use rand::Rng;

use super::layers::{scaled, ConvLayer, DenseLayer, Mode, Visitor};
use crate::nn::activation::{relu, relu2, relu2_backward, relu_backward};
use crate::nn::pool::{maxpool_backward, maxpool_forward, MaxPoolCache};
use crate::nn::Scalar;

#[derive(Debug, Clone)]
pub struct LeNet5<F: Scalar> {
    conv1: ConvLayer<F>,
    conv2: ConvLayer<F>,
    fc1: DenseLayer<F>,
    fc2: DenseLayer<F>,
    fc3: DenseLayer<F>,
    flat_dim: (usize, usize, usize),
}

pub struct LeNetCache<F: Scalar> {
    x: Array4<F>,
    a1: Array4<F>,
    pool1: MaxPoolCache,
    p1: Array4<F>,
    a2: Array4<F>,
    pool2: MaxPoolCache,
    flat: Array2<F>,
    h1: Array2<F>,
    h2: Array2<F>,
    /// Tap activation: post-ReLU second conv features.
    pub conv2_out: Array4<F>,
}

/// Spatial size after one (5×5 valid conv, 2×2 pool) round.
fn shrink(s: usize) -> usize {
    (s - 4) / 2
}

impl<F: Scalar> LeNet5<F> {
    pub fn new(input_size: usize, width: f64, classes: usize, rng: &mut impl Rng) -> Self {
        let c1 = scaled(6, width);
        let c2 = scaled(16, width);
        let s1 = shrink(input_size);
        let s2 = shrink(s1);
        let flat = c2 * s2 * s2;
        Self {
            conv1: ConvLayer::new(3, c1, 5, 1, 0, true, rng),
            conv2: ConvLayer::new(c1, c2, 5, 1, 0, true, rng),
            fc1: DenseLayer::new(flat, scaled(120, width), rng),
            fc2: DenseLayer::new(scaled(120, width), scaled(84, width), rng),
            fc3: DenseLayer::new(scaled(84, width), classes, rng),
            flat_dim: (c2, s2, s2),
        }
    }

    /// Spatial size of the `conv2.out` tap for a given input size.
    pub fn tap_spatial(input_size: usize) -> usize {
        shrink(input_size) - 4
    }

    pub fn conv2_channels(&self) -> usize {
        self.conv2.out_channels()
    }

    pub fn forward(&mut self, x: &Array4<F>, _mode: Mode) -> (Array2<F>, LeNetCache<F>) {
        let n = x.dim().0;
        let a1 = relu(&self.conv1.forward(x));
        let (p1, pool1) = maxpool_forward(&a1, 2, 2, 0);
        let a2 = relu(&self.conv2.forward(&p1));
        let (p2, pool2) = maxpool_forward(&a2, 2, 2, 0);
        let (c, h, w) = self.flat_dim;
        let flat = p2
            .into_shape_with_order((n, c * h * w))
            .expect("contiguous flatten");
        let h1 = relu2(&self.fc1.forward(&flat));
        let h2 = relu2(&self.fc2.forward(&h1));
        let logits = self.fc3.forward(&h2);
        (
            logits,
            LeNetCache {
                x: x.clone(),
                conv2_out: a2.clone(),
                a1,
                pool1,
                p1,
                a2,
                pool2,
                flat,
                h1,
                h2,
            },
        )
    }

    /// Returns the gradient at the `conv2.out` tap.
    pub fn backward(&mut self, cache: &LeNetCache<F>, dlogits: &Array2<F>) -> Array4<F> {
        let dh2 = self.fc3.backward(&cache.h2, dlogits);
        let dh2 = relu2_backward(&cache.h2, &dh2);
        let dh1 = self.fc2.backward(&cache.h1, &dh2);
        let dh1 = relu2_backward(&cache.h1, &dh1);
        let dflat = self.fc1.backward(&cache.flat, &dh1);
        let n = dflat.dim().0;
        let (c, h, w) = self.flat_dim;
        let dp2 = dflat
            .into_shape_with_order((n, c, h, w))
            .expect("contiguous unflatten");
        let da2 = maxpool_backward(&cache.pool2, &dp2);
        let tap_grad = da2.clone();
        let dz2 = relu_backward(&cache.a2, &da2);
        let dp1 = self
            .conv2
            .backward(&cache.p1, &dz2, true)
            .expect("dx requested");
        let da1 = maxpool_backward(&cache.pool1, &dp1);
        let dz1 = relu_backward(&cache.a1, &da1);
        self.conv1.backward(&cache.x, &dz1, false);
        tap_grad
    }

    pub fn visit(&mut self, f: &mut Visitor<'_, F>) {
        self.conv1.visit("conv1", f);
        self.conv2.visit("conv2", f);
        self.fc1.visit("fc1", f);
        self.fc2.visit("fc2", f);
        self.fc3.visit("fc3", f);
    }

    pub fn zero_grads(&mut self) {
        self.conv1.zero_grads();
        self.conv2.zero_grads();
        self.fc1.zero_grads();
        self.fc2.zero_grads();
        self.fc3.zero_grads();
    }
}
