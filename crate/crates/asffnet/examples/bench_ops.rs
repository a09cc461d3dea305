//! Per-kernel timing breakdown at desk-scale layer shapes.

use asffnet::nn::batchnorm::{batchnorm_backward, batchnorm_forward_train};
use asffnet::nn::conv::{conv2d_backward, conv2d_forward};
use ndarray::{Array1, Array4};
use std::time::Instant;

fn time<R>(label: &str, iters: usize, mut f: impl FnMut() -> R) {
    let t0 = Instant::now();
    for _ in 0..iters {
        std::hint::black_box(f());
    }
    println!("{label}: {:.2} ms", t0.elapsed().as_secs_f64() * 1e3 / iters as f64);
}

fn main() {
    // stage-2 3x3 conv at desk scale: (32, 16, 16, 16) -> 16ch
    let x = Array4::<f32>::from_shape_fn((32, 16, 16, 16), |(n, c, i, j)| {
        ((n * 31 + c * 7 + i * 3 + j) % 13) as f32 / 13.0
    });
    let w = Array4::<f32>::from_shape_fn((16, 16, 3, 3), |(o, c, i, j)| {
        ((o * 5 + c * 3 + i + j) % 11) as f32 / 11.0 - 0.5
    });
    time("conv3x3 16->16 @16^2 fwd", 20, || conv2d_forward(&x, &w, None, 1, 1));
    let dy = conv2d_forward(&x, &w, None, 1, 1);
    time("conv3x3 16->16 @16^2 bwd", 20, || {
        conv2d_backward(&x, &w, 1, 1, &dy, true)
    });

    // stage-4 3x3 conv: (32, 64, 4, 4)
    let x4 = Array4::<f32>::from_shape_fn((32, 64, 4, 4), |(n, c, i, j)| {
        ((n * 31 + c * 7 + i * 3 + j) % 13) as f32 / 13.0
    });
    let w4 = Array4::<f32>::from_shape_fn((64, 64, 3, 3), |(o, c, i, j)| {
        ((o * 5 + c * 3 + i + j) % 11) as f32 / 11.0 - 0.5
    });
    time("conv3x3 64->64 @4^2 fwd", 50, || conv2d_forward(&x4, &w4, None, 1, 1));

    // pointwise conv: (32, 64, 16, 16) -> 256
    let xp = Array4::<f32>::from_shape_fn((32, 64, 16, 16), |(n, c, i, j)| {
        ((n * 31 + c * 7 + i * 3 + j) % 13) as f32 / 13.0
    });
    let wp = Array4::<f32>::from_shape_fn((256, 64, 1, 1), |(o, c, _, _)| {
        ((o * 5 + c * 3) % 11) as f32 / 11.0 - 0.5
    });
    time("conv1x1 64->256 @16^2 fwd", 20, || {
        conv2d_forward(&xp, &wp, None, 1, 0)
    });
    let dyp = conv2d_forward(&xp, &wp, None, 1, 0);
    time("conv1x1 64->256 @16^2 bwd", 20, || {
        conv2d_backward(&xp, &wp, 1, 0, &dyp, true)
    });

    // batchnorm at (32, 64, 16, 16)
    let g = Array1::<f32>::ones(64);
    let b = Array1::<f32>::zeros(64);
    time("bn fwd @(32,64,16,16)", 20, || {
        let mut rm = Array1::<f32>::zeros(64);
        let mut rv = Array1::<f32>::ones(64);
        batchnorm_forward_train(&xp, &g, &b, &mut rm, &mut rv, 0.1, 1e-5)
    });
    let mut rm = Array1::<f32>::zeros(64);
    let mut rv = Array1::<f32>::ones(64);
    let (_, cache) = batchnorm_forward_train(&xp, &g, &b, &mut rm, &mut rv, 0.1, 1e-5);
    time("bn bwd @(32,64,16,16)", 20, || {
        batchnorm_backward(&cache, &g, &xp)
    });
}
