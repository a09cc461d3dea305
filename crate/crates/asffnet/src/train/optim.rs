//! SGD and Adam, textbook form.
//!
//! The per-parameter update rules are free functions over dynamic-dim
//! views so they can be verified in isolation against hand-stepped
//! recursions; [`Optimizer`] drives them across a model's parameter
//! visitor in deterministic visit order.

use ndarray::{ArrayD, ArrayViewMutD};
use serde::{Deserialize, Serialize};

use crate::backbones::{Model, ParamVisit};
use crate::backbones::layers::ParamKind;
use crate::error::{Error, Result};
use crate::nn::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// w ← w − lr · (g + λw)
pub fn sgd_update<F: Scalar>(
    mut value: ArrayViewMutD<'_, F>,
    grad: &ArrayD<F>,
    lr: F,
    weight_decay: F,
) {
    value.zip_mut_with(grad, |w, &g| {
        *w = *w - lr * (g + weight_decay * *w);
    });
}

/// Textbook Adam with bias correction; decay enters as L2 on the gradient.
#[allow(clippy::too_many_arguments)]
pub fn adam_update<F: Scalar>(
    mut value: ArrayViewMutD<'_, F>,
    grad: &ArrayD<F>,
    m: &mut ArrayD<F>,
    v: &mut ArrayD<F>,
    t: u64,
    lr: F,
    weight_decay: F,
) {
    let b1 = F::from_f64(ADAM_BETA1);
    let b2 = F::from_f64(ADAM_BETA2);
    let eps = F::from_f64(ADAM_EPS);
    let bc1 = F::one() - F::from_f64(ADAM_BETA1.powi(t as i32));
    let bc2 = F::one() - F::from_f64(ADAM_BETA2.powi(t as i32));
    ndarray::Zip::from(&mut value)
        .and(grad)
        .and(m)
        .and(v)
        .for_each(|w, &graw, m, v| {
            let g = graw + weight_decay * *w;
            *m = b1 * *m + (F::one() - b1) * g;
            *v = b2 * *v + (F::one() - b2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *w = *w - lr * mhat / (vhat.sqrt() + eps);
        });
}

struct AdamSlot<F: Scalar> {
    name: String,
    m: ArrayD<F>,
    v: ArrayD<F>,
}

/// Optimizer state bound to one model's trainable parameters.
pub struct Optimizer<F: Scalar> {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    slots: Vec<AdamSlot<F>>,
    t: u64,
}

impl<F: Scalar> Optimizer<F> {
    pub fn new(kind: OptimizerKind, learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            kind,
            learning_rate,
            weight_decay,
            slots: Vec::new(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update using the gradients currently accumulated in
    /// the model, with an optional learning-rate override for schedules.
    pub fn step(&mut self, model: &mut Model<F>, lr_override: Option<f64>) -> Result<()> {
        self.t += 1;
        let t = self.t;
        let lr = F::from_f64(lr_override.unwrap_or(self.learning_rate));
        let wd = F::from_f64(self.weight_decay);
        let kind = self.kind;
        let first = self.slots.is_empty() && kind == OptimizerKind::Adam;
        let slots = &mut self.slots;
        let mut idx = 0usize;
        let mut err = None;
        model.visit_params(&mut |p: ParamVisit<'_, F>| {
            if p.kind != ParamKind::Trainable || err.is_some() {
                return;
            }
            let grad = match p.grad {
                Some(g) => g.to_owned(),
                None => return,
            };
            match kind {
                OptimizerKind::Sgd => sgd_update(p.value, &grad, lr, wd),
                OptimizerKind::Adam => {
                    if first {
                        slots.push(AdamSlot {
                            name: p.name.clone(),
                            m: ArrayD::zeros(grad.raw_dim()),
                            v: ArrayD::zeros(grad.raw_dim()),
                        });
                    }
                    let Some(slot) = slots.get_mut(idx) else {
                        err = Some(Error::training(format!(
                            "optimizer state missing for parameter '{}'",
                            p.name
                        )));
                        return;
                    };
                    if slot.name != p.name {
                        err = Some(Error::training(format!(
                            "optimizer state misaligned: '{}' vs '{}'",
                            slot.name, p.name
                        )));
                        return;
                    }
                    adam_update(p.value, &grad, &mut slot.m, &mut slot.v, t, lr, wd);
                    idx += 1;
                }
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// (name, moment-1, moment-2) triples for checkpointing.
    pub fn state(&self) -> impl Iterator<Item = (&str, &ArrayD<F>, &ArrayD<F>)> {
        self.slots.iter().map(|s| (s.name.as_str(), &s.m, &s.v))
    }

    pub fn restore_state(
        &mut self,
        t: u64,
        slots: Vec<(String, ArrayD<F>, ArrayD<F>)>,
    ) {
        self.t = t;
        self.slots = slots
            .into_iter()
            .map(|(name, m, v)| AdamSlot { name, m, v })
            .collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn sgd_matches_hand_stepped_recursion_for_five_steps() {
        let mut w = ArrayD::<f64>::from_elem(IxDyn(&[1]), 0.7);
        let grads = [0.3, -0.1, 0.25, 0.0, -0.4];
        let (lr, wd) = (0.05, 0.01);

        let mut w_hand = 0.7f64;
        for (k, &g) in grads.iter().enumerate() {
            let garr = ArrayD::from_elem(IxDyn(&[1]), g);
            sgd_update(w.view_mut(), &garr, lr, wd);
            w_hand -= lr * (g + wd * w_hand);
            assert!(
                (w[[0]] - w_hand).abs() < 1e-10,
                "step {k}: {} vs {w_hand}",
                w[[0]]
            );
        }
    }

    #[test]
    fn adam_matches_hand_stepped_recursion_for_five_steps() {
        let mut w = ArrayD::<f64>::from_elem(IxDyn(&[1]), -0.3);
        let mut m = ArrayD::<f64>::zeros(IxDyn(&[1]));
        let mut v = ArrayD::<f64>::zeros(IxDyn(&[1]));
        let grads = [0.5, 0.5, -0.2, 0.1, 0.9];
        let lr = 0.001;

        let (mut wh, mut mh, mut vh) = (-0.3f64, 0.0f64, 0.0f64);
        for (k, &g) in grads.iter().enumerate() {
            let t = (k + 1) as u64;
            let garr = ArrayD::from_elem(IxDyn(&[1]), g);
            adam_update(w.view_mut(), &garr, &mut m, &mut v, t, lr, 0.0);

            mh = ADAM_BETA1 * mh + (1.0 - ADAM_BETA1) * g;
            vh = ADAM_BETA2 * vh + (1.0 - ADAM_BETA2) * g * g;
            let mhat = mh / (1.0 - ADAM_BETA1.powi(t as i32));
            let vhat = vh / (1.0 - ADAM_BETA2.powi(t as i32));
            wh -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            assert!(
                (w[[0]] - wh).abs() < 1e-10,
                "step {k}: {} vs {wh}",
                w[[0]]
            );
        }
    }

    #[test]
    fn weight_decay_alone_shrinks_parameters_monotonically() {
        let mut w = ArrayD::<f64>::from_elem(IxDyn(&[3]), 2.0);
        let zero = ArrayD::<f64>::zeros(IxDyn(&[3]));
        let mut prev = 2.0f64;
        for _ in 0..50 {
            sgd_update(w.view_mut(), &zero, 0.1, 0.05);
            let now = w[[0]];
            assert!(now < prev && now > 0.0);
            prev = now;
        }
    }
}
