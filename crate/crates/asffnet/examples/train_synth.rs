//! Desk-profile feasibility run on the synthetic multi-scale task.

use std::sync::Arc;

use asffnet::backbones::{build_backbone, Arch, BackboneSpec};
use asffnet::data::batch::LoadedDataset;
use asffnet::data::synthetic::{synthesize_dataset, CueMode, SyntheticSpec};
use asffnet::data::{compute_normalization, split, PreprocessConfig, SplitConfig};
use asffnet::train::{default_config, train, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let arch: Arch = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(Arch::AsffResnet50);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20);
    let n_per_class: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(625);
    let seed: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cue: CueMode = args
        .get(5)
        .map(|s| s.parse().unwrap())
        .unwrap_or(CueMode::MultiScale);
    let lr_override: Option<f64> = args.get(6).and_then(|s| s.parse().ok());

    let dir = std::env::temp_dir().join(format!("asff-synth-{n_per_class}-{cue:?}"));
    let spec = SyntheticSpec {
        n_per_class,
        image_size: 64,
        seed: 7,
        cue_mode: cue,
    };
    let (manifest, _) = synthesize_dataset(&spec, &dir).unwrap();
    let (train_m, test_m) = split(
        &manifest,
        &SplitConfig {
            seed: 7,
            ..Default::default()
        },
    )
    .unwrap();
    eprintln!(
        "dataset: {} train / {} test",
        train_m.len(),
        test_m.len()
    );

    let norm = compute_normalization(&train_m, 64).unwrap();
    eprintln!("normalization: {norm:?}");
    let pre = PreprocessConfig {
        resize_to: 64,
        normalize: norm,
        augment: Default::default(),
    };
    let train_ds = Arc::new(LoadedDataset::load(&train_m, 64).unwrap());
    let test_ds = Arc::new(LoadedDataset::load(&test_m, 64).unwrap());

    let bspec = BackboneSpec::new(arch, 64, 0.25, 2);
    let mut model = build_backbone::<f32>(&bspec, seed).unwrap();
    let mut cfg = TrainConfig {
        epochs,
        seed,
        ..default_config(arch)
    };
    if let Some(lr) = lr_override {
        cfg.learning_rate = lr;
    }
    eprintln!("config: {cfg:?}");
    let t0 = std::time::Instant::now();
    let (history, _) = train(&mut model, &train_ds, &test_ds, &pre, &cfg).unwrap();
    for r in &history.records {
        eprintln!(
            "epoch {:2}  train {:.4}/{:.3}  test {:.4}/{:.3}  ({:.1}s)",
            r.epoch, r.train_loss, r.train_acc, r.test_loss, r.test_acc, r.seconds
        );
    }
    eprintln!("total: {:.1}s", t0.elapsed().as_secs_f64());
}
