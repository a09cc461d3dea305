//! The gated dual-branch fusion head that turns a residual trunk into the
//! adaptive-fusion classifier.
//!
//! Stage-5 features are upsampled to the stage-4 grid and projected to
//! matching channels; a gate (GAP → dense+ReLU → dense+softmax over the
//! concatenated branches) emits a per-sample ω, and the fused map
//! ω·F1 + (1−ω)·F2 feeds GAP and the classifier.

use ndarray::{Array2, Array4};
use rand::Rng;

use super::layers::{ConvLayer, DenseLayer, Mode, Visitor};
use crate::fusion::ops::{
    fuse_dual_backward, fuse_dual_forward, gate_backward, gate_forward, resample_backward,
    resample_forward, GateCache,
};
use crate::fusion::WeightGeneratorSpec;
use crate::nn::pool::{global_avg_pool, global_avg_pool_backward};
use crate::nn::Scalar;

#[derive(Debug, Clone)]
pub struct FusionHead<F: Scalar> {
    /// 1×1 projection aligning stage-5 channels to stage-4.
    pub proj: ConvLayer<F>,
    pub gate1: DenseLayer<F>,
    pub gate2: DenseLayer<F>,
    pub head: DenseLayer<F>,
    pub gate_spec: WeightGeneratorSpec,
    c4: usize,
}

pub struct FusionHeadCache<F: Scalar> {
    f1: Array4<F>,
    /// Bilinearly resized (not yet projected) stage-5 features.
    f2_resized: Array4<F>,
    f2_aligned: Array4<F>,
    gate: GateCache<F>,
    pub fused: Array4<F>,
    pooled: Array2<F>,
    s5_spatial: (usize, usize),
}

impl<F: Scalar> FusionHeadCache<F> {
    /// Per-sample gate weights ω (first softmax output).
    pub fn omegas(&self) -> Vec<F> {
        self.gate.probs.column(0).to_vec()
    }
}

impl<F: Scalar> FusionHead<F> {
    pub fn new(
        c4: usize,
        c5: usize,
        classes: usize,
        gate_spec: WeightGeneratorSpec,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            proj: ConvLayer::new(c5, c4, 1, 1, 0, true, rng),
            gate1: DenseLayer::new(2 * c4, gate_spec.reduction_units, rng),
            gate2: DenseLayer::new(gate_spec.reduction_units, 2, rng),
            head: DenseLayer::new(c4, classes, rng),
            gate_spec,
            c4,
        }
    }

    pub fn forward(
        &mut self,
        s4: &Array4<F>,
        s5: &Array4<F>,
        _mode: Mode,
    ) -> (Array2<F>, FusionHeadCache<F>) {
        let (_, _, h4, w4) = s4.dim();
        let (_, _, h5, w5) = s5.dim();
        let proj_w2 = self
            .proj
            .w
            .value
            .view()
            .into_shape_with_order((self.c4, s5.dim().1))
            .expect("1x1 kernel reshapes to a matrix")
            .to_owned();
        let proj_b = &self.proj.b.as_ref().expect("projection has bias").value;
        let (f2_aligned, f2_resized) = resample_forward(s5, h4, w4, &proj_w2, proj_b);
        let gate = gate_forward(
            s4,
            &f2_aligned,
            &self.gate1.w.value,
            &self.gate1.b.value,
            &self.gate2.w.value,
            &self.gate2.b.value,
        );
        let fused = fuse_dual_forward(s4, &f2_aligned, &gate.probs);
        let pooled = global_avg_pool(&fused);
        let logits = self.head.forward(&pooled);
        (
            logits,
            FusionHeadCache {
                f1: s4.clone(),
                f2_resized,
                f2_aligned,
                gate,
                fused,
                pooled,
                s5_spatial: (h5, w5),
            },
        )
    }

    /// Returns (d stage4.out from fusion paths, d stage5.out, d fused map).
    pub fn backward(
        &mut self,
        cache: &FusionHeadCache<F>,
        dlogits: &Array2<F>,
    ) -> (Array4<F>, Array4<F>, Array4<F>) {
        let dpooled = self.head.backward(&cache.pooled, dlogits);
        let dfused = global_avg_pool_backward(&dpooled, cache.fused.dim());
        let blend = fuse_dual_backward(&cache.f1, &cache.f2_aligned, &cache.gate.probs, &dfused);
        let gate = gate_backward(
            &cache.gate,
            &self.gate1.w.value,
            &self.gate2.w.value,
            self.c4,
            &blend.dprobs,
        );
        self.gate1.w.grad += &gate.dw1;
        self.gate1.b.grad += &gate.db1;
        self.gate2.w.grad += &gate.dw2;
        self.gate2.b.grad += &gate.db2;

        let df2_aligned = &blend.df2 + &gate.df2;
        let proj_w2 = self
            .proj
            .w
            .value
            .view()
            .into_shape_with_order((self.c4, cache.f2_resized.dim().1))
            .expect("1x1 kernel reshapes to a matrix")
            .to_owned();
        let (h5, w5) = cache.s5_spatial;
        let rs = resample_backward(&cache.f2_resized, h5, w5, &proj_w2, &df2_aligned);
        let c5 = cache.f2_resized.dim().1;
        self.proj.w.grad += &rs
            .dw
            .into_shape_with_order((self.c4, c5, 1, 1))
            .expect("dw reshapes to a 1x1 kernel");
        self.proj.b.as_mut().expect("projection has bias").grad += &rs.db;

        let df1 = &blend.df1 + &gate.df1;
        (df1, rs.dx, dfused)
    }

    pub fn visit(&mut self, f: &mut Visitor<'_, F>) {
        self.proj.visit("fusion.proj", f);
        self.gate1.visit("fusion.gate1", f);
        self.gate2.visit("fusion.gate2", f);
        self.head.visit("head", f);
    }

    pub fn zero_grads(&mut self) {
        self.proj.zero_grads();
        self.gate1.zero_grads();
        self.gate2.zero_grads();
        self.head.zero_grads();
    }
}
