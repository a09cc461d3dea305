//! Parameter-owning layer building blocks for the backbones.
//!
//! Each layer owns its values and a same-shaped gradient buffer;
//! `backward` accumulates into the gradient. A name-based visitor walks
//! every array so the optimizer and the checkpoint format never depend
//! on concrete layer types.

use ndarray::{Array, Array1, Array2, Array4, ArrayViewMutD, Dimension, Ix1, Ix2, Ix4};
use rand::Rng;

use crate::nn::activation::{relu, relu_backward};
use crate::nn::batchnorm::{
    batchnorm_backward, batchnorm_forward_eval, batchnorm_forward_train, BatchNormCache,
};
use crate::nn::conv::{conv2d_backward, conv2d_forward};
use crate::nn::dense::{dense_backward, dense_forward};
use crate::nn::init::he_uniform;
use crate::nn::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer; receives gradients.
    Trainable,
    /// Carried state (batch-norm running statistics): checkpointed but
    /// never touched by the optimizer.
    State,
}

/// One named array surfaced by the visitor.
pub struct ParamVisit<'a, F: Scalar> {
    pub name: String,
    pub kind: ParamKind,
    pub value: ArrayViewMutD<'a, F>,
    /// Present iff `kind == Trainable`.
    pub grad: Option<ArrayViewMutD<'a, F>>,
}

pub type Visitor<'v, F> = dyn FnMut(ParamVisit<'_, F>) + 'v;

/// A trainable array plus its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<F: Scalar, D: Dimension> {
    pub value: Array<F, D>,
    pub grad: Array<F, D>,
}

impl<F: Scalar, D: Dimension> Param<F, D> {
    pub fn new(value: Array<F, D>) -> Self {
        let grad = Array::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn visit(&mut self, name: String, f: &mut Visitor<'_, F>) {
        f(ParamVisit {
            name,
            kind: ParamKind::Trainable,
            value: self.value.view_mut().into_dyn(),
            grad: Some(self.grad.view_mut().into_dyn()),
        });
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }
}

fn visit_state<F: Scalar, D: Dimension>(
    arr: &mut Array<F, D>,
    name: String,
    f: &mut Visitor<'_, F>,
) {
    f(ParamVisit {
        name,
        kind: ParamKind::State,
        value: arr.view_mut().into_dyn(),
        grad: None,
    });
}

#[derive(Debug, Clone)]
pub struct ConvLayer<F: Scalar> {
    pub w: Param<F, Ix4>,
    pub b: Option<Param<F, Ix1>>,
    pub stride: usize,
    pub pad: usize,
}

impl<F: Scalar> ConvLayer<F> {
    pub fn new(
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_c * kernel * kernel;
        Self {
            w: Param::new(he_uniform((out_c, in_c, kernel, kernel), fan_in, rng)),
            b: bias.then(|| Param::new(Array1::zeros(out_c))),
            stride,
            pad,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.w.value.dim().0
    }

    pub fn forward(&self, x: &Array4<F>) -> Array4<F> {
        conv2d_forward(
            x,
            &self.w.value,
            self.b.as_ref().map(|b| &b.value),
            self.stride,
            self.pad,
        )
    }

    pub fn backward(&mut self, x: &Array4<F>, dy: &Array4<F>, need_dx: bool) -> Option<Array4<F>> {
        let grads = conv2d_backward(x, &self.w.value, self.stride, self.pad, dy, need_dx);
        self.w.grad += &grads.dw;
        if let Some(b) = self.b.as_mut() {
            b.grad += &grads.db;
        }
        grads.dx
    }

    pub fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, F>) {
        self.w.visit(format!("{prefix}.weight"), f);
        if let Some(b) = self.b.as_mut() {
            b.visit(format!("{prefix}.bias"), f);
        }
    }

    pub fn zero_grads(&mut self) {
        self.w.zero_grad();
        if let Some(b) = self.b.as_mut() {
            b.zero_grad();
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer<F: Scalar> {
    pub w: Param<F, Ix2>,
    pub b: Param<F, Ix1>,
}

impl<F: Scalar> DenseLayer<F> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            w: Param::new(he_uniform((in_dim, out_dim), in_dim, rng)),
            b: Param::new(Array1::zeros(out_dim)),
        }
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        dense_forward(x, &self.w.value, &self.b.value)
    }

    pub fn backward(&mut self, x: &Array2<F>, dy: &Array2<F>) -> Array2<F> {
        let grads = dense_backward(x, &self.w.value, dy);
        self.w.grad += &grads.dw;
        self.b.grad += &grads.db;
        grads.dx
    }

    pub fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, F>) {
        self.w.visit(format!("{prefix}.weight"), f);
        self.b.visit(format!("{prefix}.bias"), f);
    }

    pub fn zero_grads(&mut self) {
        self.w.zero_grad();
        self.b.zero_grad();
    }
}

pub enum BnCache<F: Scalar> {
    Train(BatchNormCache<F>),
    /// Eval-mode backward is an affine scale per channel.
    Eval { scale: Array1<F> },
}

#[derive(Debug, Clone)]
pub struct BatchNormLayer<F: Scalar> {
    pub gamma: Param<F, Ix1>,
    pub beta: Param<F, Ix1>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    pub momentum: F,
    pub eps: F,
}

impl<F: Scalar> BatchNormLayer<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Array1::ones(channels)),
            beta: Param::new(Array1::zeros(channels)),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: F::from_f64(0.1),
            eps: F::from_f64(1e-5),
        }
    }

    pub fn forward(&mut self, x: &Array4<F>, mode: Mode) -> (Array4<F>, BnCache<F>) {
        match mode {
            Mode::Train => {
                let (y, cache) = batchnorm_forward_train(
                    x,
                    &self.gamma.value,
                    &self.beta.value,
                    &mut self.running_mean,
                    &mut self.running_var,
                    self.momentum,
                    self.eps,
                );
                (y, BnCache::Train(cache))
            }
            Mode::Eval => {
                let y = batchnorm_forward_eval(
                    x,
                    &self.gamma.value,
                    &self.beta.value,
                    &self.running_mean,
                    &self.running_var,
                    self.eps,
                );
                let eps = self.eps;
                let scale = self
                    .gamma
                    .value
                    .iter()
                    .zip(self.running_var.iter())
                    .map(|(&g, &v)| g / (v + eps).sqrt())
                    .collect::<Array1<F>>();
                (y, BnCache::Eval { scale })
            }
        }
    }

    pub fn backward(&mut self, cache: &BnCache<F>, dy: &Array4<F>) -> Array4<F> {
        match cache {
            BnCache::Train(c) => {
                let grads = batchnorm_backward(c, &self.gamma.value, dy);
                self.gamma.grad += &grads.dgamma;
                self.beta.grad += &grads.dbeta;
                grads.dx
            }
            BnCache::Eval { scale } => {
                // no parameter gradients in eval mode (used by attribution,
                // not by training)
                let mut dx = dy.clone();
                for (c, &s) in scale.iter().enumerate() {
                    dx.index_axis_mut(ndarray::Axis(1), c).mapv_inplace(|v| v * s);
                }
                dx
            }
        }
    }

    pub fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, F>) {
        self.gamma.visit(format!("{prefix}.gamma"), f);
        self.beta.visit(format!("{prefix}.beta"), f);
        visit_state(&mut self.running_mean, format!("{prefix}.running_mean"), f);
        visit_state(&mut self.running_var, format!("{prefix}.running_var"), f);
    }

    pub fn zero_grads(&mut self) {
        self.gamma.zero_grad();
        self.beta.zero_grad();
    }
}

/// conv → batch norm → ReLU, the workhorse unit of the residual nets.
#[derive(Debug, Clone)]
pub struct ConvBnRelu<F: Scalar> {
    pub conv: ConvLayer<F>,
    pub bn: BatchNormLayer<F>,
    pub relu: bool,
}

pub struct ConvBnReluCache<F: Scalar> {
    pub x: Array4<F>,
    pub bn: BnCache<F>,
    /// Post-activation output; used as the ReLU mask.
    pub y: Array4<F>,
}

impl<F: Scalar> ConvBnRelu<F> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        relu: bool,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            conv: ConvLayer::new(in_c, out_c, kernel, stride, pad, false, rng),
            bn: BatchNormLayer::new(out_c),
            relu,
        }
    }

    pub fn forward(&mut self, x: &Array4<F>, mode: Mode) -> (Array4<F>, ConvBnReluCache<F>) {
        let z = self.conv.forward(x);
        let (zn, bn_cache) = self.bn.forward(&z, mode);
        let y = if self.relu { relu(&zn) } else { zn };
        (
            y.clone(),
            ConvBnReluCache {
                x: x.clone(),
                bn: bn_cache,
                y,
            },
        )
    }

    pub fn backward(
        &mut self,
        cache: &ConvBnReluCache<F>,
        dy: &Array4<F>,
        need_dx: bool,
    ) -> Option<Array4<F>> {
        let dz = if self.relu {
            relu_backward(&cache.y, dy)
        } else {
            dy.clone()
        };
        let dconv = self.bn.backward(&cache.bn, &dz);
        self.conv.backward(&cache.x, &dconv, need_dx)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, F>) {
        self.conv.visit(&format!("{prefix}.conv"), f);
        self.bn.visit(&format!("{prefix}.bn"), f);
    }

    pub fn zero_grads(&mut self) {
        self.conv.zero_grads();
        self.bn.zero_grads();
    }
}

/// Scales a base channel count by the width multiplier, floor 1.
pub fn scaled(base: usize, width_multiplier: f64) -> usize {
    ((base as f64 * width_multiplier).round() as usize).max(1)
}
