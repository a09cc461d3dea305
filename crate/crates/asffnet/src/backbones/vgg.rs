//! VGG-16: five conv stages with 2×2 max pools, three dense layers.

use ndarray::{Array2, Array4};
use rand::Rng;

use super::layers::{scaled, ConvLayer, DenseLayer, Mode, Visitor};
use crate::nn::activation::{relu, relu2, relu2_backward, relu_backward};
use crate::nn::pool::{maxpool_backward, maxpool_forward, MaxPoolCache};
use crate::nn::Scalar;

const STAGE_WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];
const STAGE_DEPTHS: [usize; 5] = [2, 2, 3, 3, 3];

#[derive(Debug, Clone)]
struct VggStage<F: Scalar> {
    convs: Vec<ConvLayer<F>>,
}

struct VggStageCache<F: Scalar> {
    /// (conv input, post-ReLU output) per conv.
    convs: Vec<(Array4<F>, Array4<F>)>,
    pool: MaxPoolCache,
    /// Post-pool stage output.
    out: Array4<F>,
}

impl<F: Scalar> VggStage<F> {
    fn new(in_c: usize, out_c: usize, depth: usize, rng: &mut impl Rng) -> Self {
        let mut convs = Vec::with_capacity(depth);
        let mut c = in_c;
        for _ in 0..depth {
            convs.push(ConvLayer::new(c, out_c, 3, 1, 1, true, rng));
            c = out_c;
        }
        Self { convs }
    }

    fn forward(&mut self, x: &Array4<F>) -> (Array4<F>, VggStageCache<F>) {
        let mut caches = Vec::with_capacity(self.convs.len());
        let mut h = x.clone();
        for conv in self.convs.iter_mut() {
            let y = relu(&conv.forward(&h));
            caches.push((h, y.clone()));
            h = y;
        }
        let (out, pool) = maxpool_forward(&h, 2, 2, 0);
        (
            out.clone(),
            VggStageCache {
                convs: caches,
                pool,
                out,
            },
        )
    }

    fn backward(&mut self, cache: &VggStageCache<F>, dy: &Array4<F>, need_dx: bool) -> Option<Array4<F>> {
        let mut d = maxpool_backward(&cache.pool, dy);
        for (i, (conv, (x, y))) in self
            .convs
            .iter_mut()
            .zip(cache.convs.iter())
            .enumerate()
            .rev()
        {
            let dz = relu_backward(y, &d);
            match conv.backward(x, &dz, need_dx || i > 0) {
                Some(dx) => d = dx,
                None => return None,
            }
        }
        Some(d)
    }

    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, F>) {
        for (i, conv) in self.convs.iter_mut().enumerate() {
            conv.visit(&format!("{prefix}.conv{}", i + 1), f);
        }
    }

    fn zero_grads(&mut self) {
        for conv in self.convs.iter_mut() {
            conv.zero_grads();
        }
    }
}

#[derive(Debug, Clone)]
pub struct Vgg16<F: Scalar> {
    stages: Vec<VggStage<F>>,
    fc1: DenseLayer<F>,
    fc2: DenseLayer<F>,
    fc3: DenseLayer<F>,
    flat_dim: (usize, usize, usize),
}

pub struct VggCache<F: Scalar> {
    stages: Vec<VggStageCache<F>>,
    flat: Array2<F>,
    h1: Array2<F>,
    h2: Array2<F>,
    /// Tap activations: post-pool outputs of stages 4 and 5.
    pub s4: Array4<F>,
    pub s5: Array4<F>,
}

impl<F: Scalar> Vgg16<F> {
    pub fn new(input_size: usize, width: f64, classes: usize, rng: &mut impl Rng) -> Self {
        let mut stages = Vec::with_capacity(5);
        let mut c = 3;
        for (w, d) in STAGE_WIDTHS.iter().zip(STAGE_DEPTHS.iter()) {
            let out_c = scaled(*w, width);
            stages.push(VggStage::new(c, out_c, *d, rng));
            c = out_c;
        }
        let side = input_size / 32;
        let flat = c * side * side;
        let fc_width = scaled(4096, width);
        Self {
            stages,
            fc1: DenseLayer::new(flat, fc_width, rng),
            fc2: DenseLayer::new(fc_width, fc_width, rng),
            fc3: DenseLayer::new(fc_width, classes, rng),
            flat_dim: (c, side, side),
        }
    }

    pub fn stage4_channels(&self) -> usize {
        self.stages[3].convs.last().expect("stage 4").out_channels()
    }

    pub fn stage5_channels(&self) -> usize {
        self.flat_dim.0
    }

    pub fn forward(&mut self, x: &Array4<F>, _mode: Mode) -> (Array2<F>, VggCache<F>) {
        let n = x.dim().0;
        let mut caches = Vec::with_capacity(5);
        let mut h = x.clone();
        for stage in self.stages.iter_mut() {
            let (y, c) = stage.forward(&h);
            caches.push(c);
            h = y;
        }
        let s4 = caches[3].out.clone();
        let s5 = caches[4].out.clone();
        let (c, sh, sw) = self.flat_dim;
        let flat = h
            .into_shape_with_order((n, c * sh * sw))
            .expect("contiguous flatten");
        let h1 = relu2(&self.fc1.forward(&flat));
        let h2 = relu2(&self.fc2.forward(&h1));
        let logits = self.fc3.forward(&h2);
        (
            logits,
            VggCache {
                stages: caches,
                flat,
                h1,
                h2,
                s4,
                s5,
            },
        )
    }

    /// Returns the gradients at the stage-4 and stage-5 taps.
    pub fn backward(&mut self, cache: &VggCache<F>, dlogits: &Array2<F>) -> (Array4<F>, Array4<F>) {
        let dh2 = self.fc3.backward(&cache.h2, dlogits);
        let dh2 = relu2_backward(&cache.h2, &dh2);
        let dh1 = self.fc2.backward(&cache.h1, &dh2);
        let dh1 = relu2_backward(&cache.h1, &dh1);
        let dflat = self.fc1.backward(&cache.flat, &dh1);
        let n = dflat.dim().0;
        let (c, sh, sw) = self.flat_dim;
        let mut d = dflat
            .into_shape_with_order((n, c, sh, sw))
            .expect("contiguous unflatten");
        let ds5 = d.clone();
        let mut ds4 = None;
        for (i, (stage, sc)) in self
            .stages
            .iter_mut()
            .zip(cache.stages.iter())
            .enumerate()
            .rev()
        {
            if i == 3 {
                ds4 = Some(d.clone());
            }
            match stage.backward(sc, &d, i > 0) {
                Some(dx) => d = dx,
                None => break,
            }
        }
        (ds4.expect("five stages"), ds5)
    }

    pub fn visit(&mut self, f: &mut Visitor<'_, F>) {
        for (i, stage) in self.stages.iter_mut().enumerate() {
            stage.visit(&format!("stage{}", i + 1), f);
        }
        self.fc1.visit("fc1", f);
        self.fc2.visit("fc2", f);
        self.fc3.visit("fc3", f);
    }

    pub fn zero_grads(&mut self) {
        for stage in self.stages.iter_mut() {
            stage.zero_grads();
        }
        self.fc1.zero_grads();
        self.fc2.zero_grads();
        self.fc3.zero_grads();
    }
}
