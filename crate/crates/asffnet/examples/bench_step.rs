//! Times forward+backward steps for the desk-scale fusion model.

use asffnet::backbones::{build_backbone, Arch, BackboneSpec, Mode};
use asffnet::nn::activation::cross_entropy_loss;
use ndarray::Array4;
use std::time::Instant;

fn main() {
    for (arch, width, input) in [
        (Arch::AsffResnet50, 0.25, 64),
        (Arch::Resnet50, 0.25, 64),
        (Arch::Resnet101, 0.25, 64),
        (Arch::Vgg16, 0.25, 64),
    ] {
        let spec = BackboneSpec::new(arch, input, width, 2);
        let mut model = build_backbone::<f32>(&spec, 7).unwrap();
        println!(
            "{arch}: {} trainable params",
            model.trainable_param_count()
        );
        let x = Array4::<f32>::from_shape_fn((32, 3, input, input), |(n, c, i, j)| {
            ((n + c + i + j) % 7) as f32 / 7.0 - 0.5
        });
        let labels: Vec<usize> = (0..32).map(|i| i % 2).collect();

        // warmup
        let (logits, cache) = model.forward(&x, Mode::Train).unwrap();
        let (_, dlogits) = cross_entropy_loss(&logits, &labels);
        model.backward(&cache, &dlogits);

        let t0 = Instant::now();
        let iters = 5;
        for _ in 0..iters {
            model.zero_grads();
            let (logits, cache) = model.forward(&x, Mode::Train).unwrap();
            let (loss, dlogits) = cross_entropy_loss(&logits, &labels);
            model.backward(&cache, &dlogits);
            std::hint::black_box(loss);
        }
        let per_step = t0.elapsed().as_secs_f64() / iters as f64;
        let t1 = Instant::now();
        for _ in 0..iters {
            let p = model.predict(&x).unwrap();
            std::hint::black_box(p);
        }
        let per_eval = t1.elapsed().as_secs_f64() / iters as f64;
        println!("  train step (batch 32): {per_step:.3}s   eval batch: {per_eval:.3}s");
        let steps_per_epoch = (1000 + 31) / 32;
        let eval_batches = (250 + 31) / 32;
        let epoch = per_step * steps_per_epoch as f64 + per_eval * eval_batches as f64;
        println!("  est. epoch (1000 train / 250 test): {epoch:.1}s -> 20 epochs {:.0}s", epoch * 20.0);
    }
}
