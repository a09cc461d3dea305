//! Training loop: per-epoch optimize/evaluate with seeded determinism.

pub mod checkpoint;
pub mod optim;

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backbones::{Arch, Mode, Model};
use crate::data::batch::{epoch_batches, LoadedDataset};
use crate::data::PreprocessConfig;
use crate::error::{Error, Result};
use crate::nn::activation::cross_entropy_loss;

pub use optim::{Optimizer, OptimizerKind};

/// How the Table-style `decay` value is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// L2 regularization with coefficient `decay`.
    #[default]
    WeightDecay,
    /// Per-step schedule lr_t = lr / (1 + decay · t).
    LrDecay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub decay_mode: DecayMode,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub seed: u64,
    /// Bounded prefetch depth of the batch queue.
    pub prefetch_depth: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::config("learning_rate must be > 0"));
        }
        if self.decay < 0.0 {
            return Err(Error::config("decay must be >= 0"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.epochs < 1 {
            return Err(Error::config("epochs must be >= 1"));
        }
        Ok(())
    }

    fn weight_decay(&self) -> f64 {
        match self.decay_mode {
            DecayMode::WeightDecay => self.decay,
            DecayMode::LrDecay => 0.0,
        }
    }

    fn lr_at_step(&self, t: u64) -> f64 {
        match self.decay_mode {
            DecayMode::WeightDecay => self.learning_rate,
            DecayMode::LrDecay => self.learning_rate / (1.0 + self.decay * t as f64),
        }
    }
}

/// Per-architecture hyperparameters (learning rate, decay, batch size,
/// optimizer). Epochs default to 500; desk-scale runs override them.
pub fn default_config(arch: Arch) -> TrainConfig {
    let (lr, optimizer) = match arch {
        Arch::Lenet5 => (1e-4, OptimizerKind::Sgd),
        Arch::Vgg16 => (1e-4, OptimizerKind::Sgd),
        Arch::Resnet34 => (5e-4, OptimizerKind::Adam),
        Arch::Resnet101 => (1e-4, OptimizerKind::Adam),
        Arch::Resnet50 => (5e-4, OptimizerKind::Sgd),
        Arch::AsffResnet50 => (1e-4, OptimizerKind::Adam),
    };
    TrainConfig {
        learning_rate: lr,
        decay: 5e-4,
        decay_mode: DecayMode::WeightDecay,
        batch_size: 32,
        optimizer,
        epochs: 500,
        seed: 0,
        prefetch_depth: 2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

fn batch_accuracy(logits: &ndarray::Array2<f32>, labels: &[usize]) -> usize {
    logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| {
            let mut best = 0usize;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best == y
        })
        .count()
}

/// Mean loss and accuracy over a dataset in eval mode.
pub fn evaluate(
    model: &mut Model<f32>,
    ds: &Arc<LoadedDataset>,
    pre: &PreprocessConfig,
    batch_size: usize,
) -> Result<(f64, f64)> {
    let mut total_loss = 0.0f64;
    let mut correct = 0usize;
    let mut seen = 0usize;
    for (x, labels) in epoch_batches(ds, pre, batch_size, false, 0, 0, 2) {
        let (logits, _) = model.forward(&x, Mode::Eval)?;
        let (loss, _) = cross_entropy_loss(&logits, &labels);
        total_loss += loss as f64 * labels.len() as f64;
        correct += batch_accuracy(&logits, &labels);
        seen += labels.len();
    }
    if seen == 0 {
        return Err(Error::config("evaluation set is empty"));
    }
    Ok((total_loss / seen as f64, correct as f64 / seen as f64))
}

/// Positive-class probabilities with labels, in manifest order.
pub fn predict_scores(
    model: &mut Model<f32>,
    ds: &Arc<LoadedDataset>,
    pre: &PreprocessConfig,
    batch_size: usize,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let mut scores = Vec::with_capacity(ds.len());
    let mut labels = Vec::with_capacity(ds.len());
    for (x, batch_labels) in epoch_batches(ds, pre, batch_size, false, 0, 0, 2) {
        let probs = model.predict(&x)?;
        for (i, &y) in batch_labels.iter().enumerate() {
            scores.push(probs[[i, 1]] as f64);
            labels.push(y);
        }
    }
    Ok((scores, labels))
}

/// Trains `[start_epoch, end_epoch)` with an existing optimizer, so a
/// resumed run continues the exact seed streams of an uninterrupted one.
#[allow(clippy::too_many_arguments)]
pub fn train_range(
    model: &mut Model<f32>,
    optimizer: &mut Optimizer<f32>,
    train_ds: &Arc<LoadedDataset>,
    test_ds: &Arc<LoadedDataset>,
    pre: &PreprocessConfig,
    cfg: &TrainConfig,
    start_epoch: usize,
    end_epoch: usize,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_ds.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    if pre.resize_to != model.spec.input_size {
        return Err(Error::config(format!(
            "preprocess resize_to {} != model input_size {}",
            pre.resize_to, model.spec.input_size
        )));
    }
    let mut history = TrainHistory::default();
    for epoch in start_epoch..end_epoch {
        let t0 = Instant::now();
        let mut epoch_loss = 0.0f64;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for (step, (x, labels)) in
            epoch_batches(train_ds, pre, cfg.batch_size, true, cfg.seed, epoch as u64, cfg.prefetch_depth)
                .enumerate()
        {
            model.zero_grads();
            let (logits, cache) = model.forward(&x, Mode::Train)?;
            let (loss, dlogits) = cross_entropy_loss(&logits, &labels);
            if !loss.is_finite() {
                return Err(Error::training(format!(
                    "non-finite loss at epoch {epoch}, step {step}"
                )));
            }
            model.backward(&cache, &dlogits);
            let lr = cfg.lr_at_step(optimizer.step_count());
            optimizer.step(model, Some(lr))?;

            epoch_loss += loss as f64 * labels.len() as f64;
            correct += batch_accuracy(&logits, &labels);
            seen += labels.len();
        }
        let (test_loss, test_acc) = evaluate(model, test_ds, pre, cfg.batch_size)?;
        history.records.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / seen as f64,
            train_acc: correct as f64 / seen as f64,
            test_loss,
            test_acc,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    Ok(history)
}

/// Trains from scratch for `cfg.epochs` epochs. The returned optimizer
/// carries the state needed to resume.
pub fn train(
    model: &mut Model<f32>,
    train_ds: &Arc<LoadedDataset>,
    test_ds: &Arc<LoadedDataset>,
    pre: &PreprocessConfig,
    cfg: &TrainConfig,
) -> Result<(TrainHistory, Optimizer<f32>)> {
    let mut optimizer = Optimizer::new(
        cfg.optimizer,
        cfg.learning_rate,
        cfg.weight_decay(),
    );
    let history = train_range(
        model,
        &mut optimizer,
        train_ds,
        test_ds,
        pre,
        cfg,
        0,
        cfg.epochs,
    )?;
    Ok((history, optimizer))
}

/// Writes the per-epoch history CSV
/// (epoch, train_loss, train_acc, test_loss, test_acc, seconds).
pub fn write_history_csv(history: &TrainHistory, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epoch",
        "train_loss",
        "train_acc",
        "test_loss",
        "test_acc",
        "seconds",
    ])?;
    for r in &history.records {
        w.write_record([
            r.epoch.to_string(),
            format!("{:.6}", r.train_loss),
            format!("{:.6}", r.train_acc),
            format!("{:.6}", r.test_loss),
            format!("{:.6}", r.test_acc),
            format!("{:.3}", r.seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history_csv(path: &Path) -> Result<TrainHistory> {
    let mut r = csv::Reader::from_path(path)?;
    let mut records = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::training(format!("bad history field '{}'", &rec[i])))
        };
        records.push(EpochRecord {
            epoch: rec[0]
                .parse()
                .map_err(|_| Error::training("bad epoch in history"))?,
            train_loss: field(1)?,
            train_acc: field(2)?,
            test_loss: field(3)?,
            test_acc: field(4)?,
            seconds: field(5)?,
        });
    }
    Ok(TrainHistory { records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_configs_match_the_hyperparameter_table() {
        let asff = default_config(Arch::AsffResnet50);
        assert_eq!(asff.learning_rate, 1e-4);
        assert_eq!(asff.decay, 5e-4);
        assert_eq!(asff.batch_size, 32);
        assert_eq!(asff.optimizer, OptimizerKind::Adam);

        let r50 = default_config(Arch::Resnet50);
        assert_eq!(r50.learning_rate, 5e-4);
        assert_eq!(r50.optimizer, OptimizerKind::Sgd);

        let lenet = default_config(Arch::Lenet5);
        assert_eq!(lenet.learning_rate, 1e-4);
        assert_eq!(lenet.optimizer, OptimizerKind::Sgd);

        let r34 = default_config(Arch::Resnet34);
        assert_eq!(r34.learning_rate, 5e-4);
        assert_eq!(r34.optimizer, OptimizerKind::Adam);

        let vgg = default_config(Arch::Vgg16);
        assert_eq!(vgg.learning_rate, 1e-4);
        assert_eq!(vgg.optimizer, OptimizerKind::Sgd);

        let r101 = default_config(Arch::Resnet101);
        assert_eq!(r101.learning_rate, 1e-4);
        assert_eq!(r101.optimizer, OptimizerKind::Adam);
    }

    #[test]
    fn lr_decay_mode_follows_the_schedule() {
        let cfg = TrainConfig {
            decay_mode: DecayMode::LrDecay,
            ..default_config(Arch::Lenet5)
        };
        assert_eq!(cfg.lr_at_step(0), cfg.learning_rate);
        let expected = cfg.learning_rate / (1.0 + cfg.decay * 10.0);
        assert!((cfg.lr_at_step(10) - expected).abs() < 1e-15);
        assert_eq!(cfg.weight_decay(), 0.0);
    }
}
