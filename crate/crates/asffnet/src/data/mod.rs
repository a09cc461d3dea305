//! Dataset ingestion: class-per-subdirectory image folders, stratified
//! splitting, preprocessing, and the synthetic desk-scale generator.

pub mod batch;
pub mod synthetic;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One labeled image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
}

/// A labeled dataset listing. Entries are ordered lexicographically by
/// path; counts are consistent with the entries by construction.
#[derive(Debug, Clone, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Label id -> class name, when known (directory loading).
    pub class_names: Vec<String>,
    /// Files that were present but not decodable.
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    pub fn from_entries(mut entries: Vec<ManifestEntry>, class_names: Vec<String>) -> Self {
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        Self {
            entries,
            class_names,
            warnings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn class_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.label).or_insert(0) += 1;
        }
        counts
    }

    pub fn num_classes(&self) -> usize {
        self.entries
            .iter()
            .map(|e| e.label + 1)
            .max()
            .unwrap_or(0)
            .max(self.class_names.len())
    }
}

/// Loads a class-per-subdirectory image folder. Subdirectories are
/// assigned labels in lexicographic order (so `benign` = 0,
/// `malignant` = 1). Undecodable files are excluded with a warning; an
/// empty class is a hard error.
pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::dataset(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    let mut class_dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.len() < 2 {
        return Err(Error::dataset(format!(
            "dataset root {} must contain at least two class subdirectories, found {}",
            root.display(),
            class_dirs.len()
        )));
    }

    let mut entries = Vec::new();
    let mut class_names = Vec::new();
    let mut warnings = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        let mut kept = 0usize;
        for f in files {
            match image::open(&f) {
                Ok(_) => {
                    entries.push(ManifestEntry { path: f, label });
                    kept += 1;
                }
                Err(err) => warnings.push(format!("skipping {}: {err}", f.display())),
            }
        }
        if kept == 0 {
            return Err(Error::dataset(format!(
                "class '{name}' has no decodable images"
            )));
        }
        class_names.push(name);
    }
    let mut manifest = DatasetManifest::from_entries(entries, class_names);
    manifest.warnings = warnings;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
            stratified: true,
        }
    }
}

/// FNV-1a over (seed, path); the per-file rank that drives assignment.
/// Keyed by content rather than position so adding files perturbs the
/// split minimally.
fn split_rank(seed: u64, path: &Path) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut absorb = |byte: u8| {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for b in seed.to_le_bytes() {
        absorb(b);
    }
    for b in path.to_string_lossy().as_bytes() {
        absorb(*b);
    }
    h
}

/// Splits a manifest into disjoint, exhaustive train/test parts. When
/// stratified, each class's train count is round(fraction · n), clamped
/// so both sides keep at least one sample per class.
pub fn split(
    manifest: &DatasetManifest,
    cfg: &SplitConfig,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::config(format!(
            "train_fraction must lie in (0, 1), got {}",
            cfg.train_fraction
        )));
    }
    if manifest.is_empty() {
        return Err(Error::dataset("cannot split an empty manifest"));
    }

    let mut train_idx: Vec<usize> = Vec::new();
    if cfg.stratified {
        for (&label, &count) in manifest.class_counts().iter() {
            if count < 2 {
                return Err(Error::dataset(format!(
                    "class {label} has {count} sample(s); stratified splitting needs >= 2"
                )));
            }
            let mut members: Vec<usize> = manifest
                .entries
                .iter()
                .enumerate()
                .filter(|(_, e)| e.label == label)
                .map(|(i, _)| i)
                .collect();
            members.sort_by_key(|&i| {
                (
                    split_rank(cfg.seed, &manifest.entries[i].path),
                    manifest.entries[i].path.clone(),
                )
            });
            let k = ((cfg.train_fraction * count as f64).round() as usize).clamp(1, count - 1);
            train_idx.extend(&members[..k]);
        }
    } else {
        let n = manifest.len();
        if n < 2 {
            return Err(Error::dataset("splitting needs at least 2 samples"));
        }
        let mut members: Vec<usize> = (0..n).collect();
        members.sort_by_key(|&i| {
            (
                split_rank(cfg.seed, &manifest.entries[i].path),
                manifest.entries[i].path.clone(),
            )
        });
        let k = ((cfg.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
        train_idx.extend(&members[..k]);
    }

    let in_train: std::collections::HashSet<usize> = train_idx.into_iter().collect();
    let mut train_entries = Vec::with_capacity(in_train.len());
    let mut test_entries = Vec::with_capacity(manifest.len() - in_train.len());
    for (i, e) in manifest.entries.iter().enumerate() {
        if in_train.contains(&i) {
            train_entries.push(e.clone());
        } else {
            test_entries.push(e.clone());
        }
    }
    Ok((
        DatasetManifest::from_entries(train_entries, manifest.class_names.clone()),
        DatasetManifest::from_entries(test_entries, manifest.class_names.clone()),
    ))
}

/// Per-channel affine normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            mean: [0.5; 3],
            std: [0.25; 3],
        }
    }
}

impl Normalization {
    pub fn normalize(&self, x: &mut Array3<f32>) {
        for c in 0..3 {
            let (m, s) = (self.mean[c], self.std[c]);
            x.index_axis_mut(ndarray::Axis(0), c)
                .mapv_inplace(|v| (v - m) / s);
        }
    }

    pub fn denormalize(&self, x: &mut Array3<f32>) {
        for c in 0..3 {
            let (m, s) = (self.mean[c], self.std[c]);
            x.index_axis_mut(ndarray::Axis(0), c)
                .mapv_inplace(|v| v * s + m);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Augment {
    pub horizontal_flip: bool,
    pub rotate90: bool,
}

impl Default for Augment {
    fn default() -> Self {
        Self {
            horizontal_flip: true,
            rotate90: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Square edge images are resized to; must match the model input.
    pub resize_to: usize,
    pub normalize: Normalization,
    /// Applied to the training stream only.
    pub augment: Augment,
}

/// Decodes an image to a (3, H, W) float array in [0, 1], resized to
/// `edge` with bilinear filtering.
pub fn load_image_chw(path: &Path, edge: usize) -> Result<Array3<f32>> {
    let img = image::open(path)?.to_rgb8();
    let img = image::imageops::resize(
        &img,
        edge as u32,
        edge as u32,
        image::imageops::FilterType::Triangle,
    );
    let mut out = Array3::<f32>::zeros((3, edge, edge));
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = p.0[c] as f32 / 255.0;
        }
    }
    Ok(out)
}

/// Per-channel mean/std over every pixel of the listed images.
pub fn compute_normalization(manifest: &DatasetManifest, edge: usize) -> Result<Normalization> {
    if manifest.is_empty() {
        return Err(Error::dataset("cannot compute statistics of an empty set"));
    }
    let mut sum = [0.0f64; 3];
    let mut sumsq = [0.0f64; 3];
    let mut count = 0usize;
    for e in &manifest.entries {
        let img = load_image_chw(&e.path, edge)?;
        for c in 0..3 {
            for &v in img.index_axis(ndarray::Axis(0), c).iter() {
                sum[c] += v as f64;
                sumsq[c] += (v as f64) * (v as f64);
            }
        }
        count += edge * edge;
    }
    let mut mean = [0.0f32; 3];
    let mut std = [0.0f32; 3];
    for c in 0..3 {
        let m = sum[c] / count as f64;
        let v = (sumsq[c] / count as f64 - m * m).max(1e-8);
        mean[c] = m as f32;
        std[c] = v.sqrt() as f32;
    }
    Ok(Normalization { mean, std })
}

/// Writes the combined manifest CSV (path, label, split) sorted by path.
pub fn write_manifest_csv(
    path: &Path,
    train: &DatasetManifest,
    test: &DatasetManifest,
) -> Result<()> {
    let mut rows: Vec<(String, usize, &str)> = train
        .entries
        .iter()
        .map(|e| (e.path.to_string_lossy().into_owned(), e.label, "train"))
        .chain(
            test.entries
                .iter()
                .map(|e| (e.path.to_string_lossy().into_owned(), e.label, "test")),
        )
        .collect();
    rows.sort();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["path", "label", "split"])?;
    for (p, l, s) in rows {
        w.write_record([p.as_str(), &l.to_string(), s])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a manifest CSV back into (train, test) manifests.
pub fn read_manifest_csv(path: &Path) -> Result<(DatasetManifest, DatasetManifest)> {
    let mut r = csv::Reader::from_path(path)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let entry = ManifestEntry {
            path: PathBuf::from(&rec[0]),
            label: rec[1]
                .parse()
                .map_err(|_| Error::dataset(format!("bad label in manifest: {}", &rec[1])))?,
        };
        match &rec[2] {
            "train" => train.push(entry),
            "test" => test.push(entry),
            other => {
                return Err(Error::dataset(format!(
                    "bad split tag '{other}' in manifest"
                )))
            }
        }
    }
    Ok((
        DatasetManifest::from_entries(train, Vec::new()),
        DatasetManifest::from_entries(test, Vec::new()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest_of(counts: &[usize]) -> DatasetManifest {
        let mut entries = Vec::new();
        for (label, &n) in counts.iter().enumerate() {
            for i in 0..n {
                entries.push(ManifestEntry {
                    path: PathBuf::from(format!("class{label}/img{i:05}.png")),
                    label,
                });
            }
        }
        DatasetManifest::from_entries(entries, vec!["benign".into(), "malignant".into()])
    }

    #[test]
    fn split_small_exact_arithmetic() {
        let m = manifest_of(&[5, 5]);
        let (train, test) = split(&m, &SplitConfig::default()).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(test.len(), 2);
        assert_eq!(train.class_counts()[&0], 4);
        assert_eq!(train.class_counts()[&1], 4);
    }

    #[test]
    fn split_is_deterministic_and_exhaustive() {
        let m = manifest_of(&[37, 23]);
        let cfg = SplitConfig {
            seed: 9,
            ..Default::default()
        };
        let (tr1, te1) = split(&m, &cfg).unwrap();
        let (tr2, te2) = split(&m, &cfg).unwrap();
        assert_eq!(tr1.entries, tr2.entries);
        assert_eq!(te1.entries, te2.entries);
        let mut all: Vec<_> = tr1.entries.iter().chain(te1.entries.iter()).collect();
        all.sort_by(|a, b| a.path.cmp(&b.path));
        assert_eq!(all.len(), m.len());
        for (a, b) in all.iter().zip(m.entries.iter()) {
            assert_eq!(**a, *b);
        }
    }

    #[test]
    fn split_matches_stratified_rounding_oracle() {
        let m = manifest_of(&[1800, 1497]);
        let (train, _) = split(&m, &SplitConfig::default()).unwrap();
        let counts = train.class_counts();
        assert_eq!(counts[&0], 1440);
        assert!(counts[&1] == 1197 || counts[&1] == 1198, "{counts:?}");
    }

    #[test]
    fn split_rejects_tiny_classes_when_stratified() {
        let m = manifest_of(&[5, 1]);
        assert!(split(&m, &SplitConfig::default()).is_err());
    }

    #[test]
    fn normalization_roundtrips() {
        let norm = Normalization {
            mean: [0.3, 0.5, 0.7],
            std: [0.2, 0.3, 0.1],
        };
        let orig = Array3::from_shape_fn((3, 4, 4), |(c, i, j)| {
            (c as f32 + 1.0) * 0.1 + i as f32 * 0.02 + j as f32 * 0.01
        });
        let mut x = orig.clone();
        norm.normalize(&mut x);
        norm.denormalize(&mut x);
        for (a, b) in x.iter().zip(orig.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
