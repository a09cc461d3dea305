//! Grad-CAM attribution at a tap layer, plus colorized overlays.
//!
//! Channel weights are the spatial means of ∂(class logit)/∂(tap
//! activation); the raw map is the ReLU of the weighted activation sum,
//! bilinearly upsampled to the input size and min-max normalized.
//! Gradients are taken w.r.t. the pre-softmax logit.

use std::path::Path;

use ndarray::{Array2, Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::backbones::{Mode, Model};
use crate::error::{Error, Result};
use crate::nn::bilinear::bilinear_resize;
use crate::nn::Scalar;

/// A normalized localization map aligned to input-image coordinates.
#[derive(Debug, Clone)]
pub struct Heatmap {
    /// Values in [0, 1], input-image resolution.
    pub values: Array2<f32>,
    pub source_layer: String,
    pub class_index: usize,
    /// True when the raw map had no dynamic range (all-zero gradient or
    /// constant response); `values` is all zeros in that case.
    pub all_zero: bool,
    pub raw_min: f32,
    pub raw_max: f32,
}

/// Sidecar record stored next to heatmap/overlay PNGs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatmapRecord {
    pub source_layer: String,
    pub class_index: usize,
    pub all_zero: bool,
    pub raw_min: f32,
    pub raw_max: f32,
}

/// Computes the Grad-CAM heatmap of `class_index` at tap `layer` for a
/// single normalized input image (3, H, W).
pub fn gradcam(
    model: &mut Model<f32>,
    input: &Array3<f32>,
    class_index: usize,
    layer: &str,
) -> Result<Heatmap> {
    if model.tap(layer).is_none() {
        let available: Vec<&str> = model.taps().iter().map(|t| t.name.as_str()).collect();
        return Err(Error::validation(format!(
            "'{layer}' is not a registered tap; available: {}",
            available.join(", ")
        )));
    }
    if class_index >= model.spec.num_classes {
        return Err(Error::validation(format!(
            "class index {class_index} out of range for {} classes",
            model.spec.num_classes
        )));
    }

    let batch = input.clone().insert_axis(Axis(0));
    model.zero_grads();
    let (logits, cache) = model.forward(&batch, Mode::Eval)?;
    let mut dlogits = ndarray::Array2::<f32>::zeros(logits.dim());
    dlogits[[0, class_index]] = 1.0;
    let tap_values = cache.tap_values();
    let activation = tap_values
        .get(layer)
        .expect("tap registered above")
        .index_axis(Axis(0), 0)
        .to_owned();
    let tap_grads = model.backward(&cache, &dlogits);
    model.zero_grads();
    let grad = tap_grads
        .get(layer)
        .expect("backward reports every tap")
        .index_axis(Axis(0), 0)
        .to_owned();

    let (c, h, w) = activation.dim();
    let spatial = (h * w) as f32;
    let mut raw = Array2::<f32>::zeros((h, w));
    for ch in 0..c {
        let weight = grad.index_axis(Axis(0), ch).sum() / spatial;
        raw.zip_mut_with(&activation.index_axis(Axis(0), ch), |r, &a| {
            *r += weight * a;
        });
    }
    raw.mapv_inplace(|v| v.max(0.0));

    let edge = model.spec.input_size;
    let raw4 = raw.insert_axis(Axis(0)).insert_axis(Axis(0));
    let up = bilinear_resize(&raw4, edge, edge);
    let up = up.index_axis(Axis(0), 0).index_axis(Axis(0), 0).to_owned();

    let raw_min = up.iter().copied().fold(f32::INFINITY, f32::min);
    let raw_max = up.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let range = raw_max - raw_min;
    let (values, all_zero) = if range <= f32::EPSILON {
        (Array2::zeros((edge, edge)), true)
    } else {
        (up.mapv(|v| (v - raw_min) / range), false)
    };

    Ok(Heatmap {
        values,
        source_layer: layer.to_string(),
        class_index,
        all_zero,
        raw_min,
        raw_max,
    })
}

/// Jet-style fixed colormap over [0, 1].
pub fn colormap(t: f32) -> [f32; 3] {
    let t = t.clamp(0.0, 1.0);
    let r = (1.5 - (4.0 * t - 3.0).abs()).clamp(0.0, 1.0);
    let g = (1.5 - (4.0 * t - 2.0).abs()).clamp(0.0, 1.0);
    let b = (1.5 - (4.0 * t - 1.0).abs()).clamp(0.0, 1.0);
    [r, g, b]
}

/// A base image with the colorized heatmap alpha-blended on top.
#[derive(Debug, Clone)]
pub struct Overlay {
    /// (3, H, W) in [0, 1].
    pub rgb: Array3<f32>,
    pub blend_alpha: f32,
}

/// Blends the colorized heatmap over a base image given in [0, 1]
/// (3, H, W) layout, matching the heatmap's resolution.
pub fn overlay(image: &Array3<f32>, heatmap: &Heatmap, blend_alpha: f32) -> Result<Overlay> {
    if !(blend_alpha > 0.0 && blend_alpha < 1.0) {
        return Err(Error::validation(format!(
            "blend_alpha must lie in (0, 1), got {blend_alpha}"
        )));
    }
    let (c, h, w) = image.dim();
    if c != 3 || (h, w) != heatmap.values.dim() {
        return Err(Error::shape(format!(
            "image is {c}x{h}x{w}, heatmap is {:?}",
            heatmap.values.dim()
        )));
    }
    let mut rgb = Array3::<f32>::zeros((3, h, w));
    for i in 0..h {
        for j in 0..w {
            let color = colormap(heatmap.values[[i, j]]);
            for ch in 0..3 {
                rgb[[ch, i, j]] =
                    (1.0 - blend_alpha) * image[[ch, i, j]] + blend_alpha * color[ch];
            }
        }
    }
    Ok(Overlay { rgb, blend_alpha })
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes the heatmap as a grayscale PNG.
pub fn save_heatmap_png(heatmap: &Heatmap, path: &Path) -> Result<()> {
    let (h, w) = heatmap.values.dim();
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for (x, y, p) in img.enumerate_pixels_mut() {
        p.0[0] = to_u8(heatmap.values[[y as usize, x as usize]]);
    }
    img.save(path)?;
    Ok(())
}

/// Writes the overlay as an RGB PNG.
pub fn save_overlay_png(overlay: &Overlay, path: &Path) -> Result<()> {
    let (_, h, w) = overlay.rgb.dim();
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for (x, y, p) in img.enumerate_pixels_mut() {
        for c in 0..3 {
            p.0[c] = to_u8(overlay.rgb[[c, y as usize, x as usize]]);
        }
    }
    img.save(path)?;
    Ok(())
}

/// Writes the sidecar JSON record.
pub fn write_heatmap_record(heatmap: &Heatmap, path: &Path) -> Result<()> {
    let record = HeatmapRecord {
        source_layer: heatmap.source_layer.clone(),
        class_index: heatmap.class_index,
        all_zero: heatmap.all_zero,
        raw_min: heatmap.raw_min,
        raw_max: heatmap.raw_max,
    };
    std::fs::write(path, serde_json::to_vec_pretty(&record)?)?;
    Ok(())
}

/// Argmax location (row, col) of a heatmap.
pub fn argmax_location<F: Scalar>(values: &Array2<F>) -> (usize, usize) {
    let mut best = (0usize, 0usize);
    let mut best_v = F::neg_infinity();
    for ((i, j), &v) in values.indexed_iter() {
        if v > best_v {
            best_v = v;
            best = (i, j);
        }
    }
    best
}

/// Gradient-free check used by tests: raw maps before normalization.
pub fn raw_maps_nonnegative(values: &Array4<f32>) -> bool {
    values.iter().all(|&v| v >= 0.0)
}
