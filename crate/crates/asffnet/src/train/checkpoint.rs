//! Checkpoint container: a JSON manifest (arch, spec, array names and
//! shapes, format version) followed by raw little-endian f32 array data.
//! Writes are atomic (temp file + rename).

use std::io::{Read, Write};
use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::backbones::layers::ParamKind;
use crate::backbones::{build_asff_resnet, build_backbone, Arch, BackboneSpec, Model, ParamVisit};
use crate::error::{Error, Result};
use crate::fusion::WeightGeneratorSpec;
use crate::train::{Optimizer, OptimizerKind, TrainConfig};

const MAGIC: &[u8; 8] = b"ASFFCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSnapshot {
    pub test_loss: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrayMeta {
    name: String,
    kind: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerMeta {
    kind: OptimizerKind,
    step_count: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    spec: BackboneSpec,
    gate_spec: Option<WeightGeneratorSpec>,
    init_seed: u64,
    epoch: usize,
    train_config: Option<TrainConfig>,
    metrics: Option<MetricSnapshot>,
    optimizer: Option<OptimizerMeta>,
    arrays: Vec<ArrayMeta>,
}

/// A loaded checkpoint: the rebuilt model plus training context.
pub struct Checkpoint {
    pub model: Model<f32>,
    pub train_config: Option<TrainConfig>,
    pub epoch: usize,
    pub metrics: Option<MetricSnapshot>,
    pub optimizer: Option<Optimizer<f32>>,
}

pub fn save_checkpoint(
    model: &mut Model<f32>,
    train_config: Option<&TrainConfig>,
    optimizer: Option<&Optimizer<f32>>,
    epoch: usize,
    metrics: Option<MetricSnapshot>,
    path: &Path,
) -> Result<()> {
    let mut arrays = Vec::new();
    let mut data: Vec<Vec<f32>> = Vec::new();
    model.visit_params(&mut |p: ParamVisit<'_, f32>| {
        arrays.push(ArrayMeta {
            name: p.name.clone(),
            kind: match p.kind {
                ParamKind::Trainable => "param".into(),
                ParamKind::State => "state".into(),
            },
            shape: p.value.shape().to_vec(),
        });
        data.push(p.value.iter().copied().collect());
    });
    let optimizer_meta = optimizer.map(|o| OptimizerMeta {
        kind: o.kind,
        step_count: o.step_count(),
    });
    if let Some(o) = optimizer {
        for (name, m, v) in o.state() {
            arrays.push(ArrayMeta {
                name: name.to_string(),
                kind: "opt_m".into(),
                shape: m.shape().to_vec(),
            });
            data.push(m.iter().copied().collect());
            arrays.push(ArrayMeta {
                name: name.to_string(),
                kind: "opt_v".into(),
                shape: v.shape().to_vec(),
            });
            data.push(v.iter().copied().collect());
        }
    }

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        spec: model.spec,
        gate_spec: model.gate_spec,
        init_seed: model.init_seed(),
        epoch,
        train_config: train_config.copied(),
        metrics,
        optimizer: optimizer_meta,
        arrays,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)?;

    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
        w.write_all(&manifest_bytes)?;
        for arr in &data {
            for v in arr {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a checkpoint, rebuilding the model from the stored spec and
/// overwriting its arrays. `expected_arch` guards against evaluating a
/// run directory with the wrong architecture.
pub fn load_checkpoint(path: &Path, expected_arch: Option<Arch>) -> Result<Checkpoint> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::checkpoint(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(Error::checkpoint(format!(
            "format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let mut len8 = [0u8; 8];
    r.read_exact(&mut len8)?;
    let mlen = u64::from_le_bytes(len8) as usize;
    let mut manifest_bytes = vec![0u8; mlen];
    r.read_exact(&mut manifest_bytes)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)?;

    if let Some(expected) = expected_arch {
        if manifest.spec.arch != expected {
            return Err(Error::checkpoint(format!(
                "expected arch {expected}, checkpoint holds {}",
                manifest.spec.arch
            )));
        }
    }

    let mut stored: Vec<(ArrayMeta, ArrayD<f32>)> = Vec::with_capacity(manifest.arrays.len());
    for meta in &manifest.arrays {
        let n: usize = meta.shape.iter().product();
        let mut buf = vec![0u8; n * 4];
        r.read_exact(&mut buf)?;
        let vals: Vec<f32> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let arr = ArrayD::from_shape_vec(ndarray::IxDyn(&meta.shape), vals)
            .map_err(|e| Error::checkpoint(format!("array '{}': {e}", meta.name)))?;
        stored.push((meta.clone(), arr));
    }

    let mut model: Model<f32> = match manifest.spec.arch {
        Arch::AsffResnet50 => {
            build_asff_resnet(&manifest.spec, manifest.gate_spec, manifest.init_seed)?
        }
        _ => build_backbone(&manifest.spec, manifest.init_seed)?,
    };

    // assign model arrays by (name, kind), tracking problems
    let mut by_key: std::collections::HashMap<(String, String), ArrayD<f32>> = stored
        .iter()
        .filter(|(m, _)| m.kind == "param" || m.kind == "state")
        .map(|(m, a)| ((m.name.clone(), m.kind.clone()), a.clone()))
        .collect();
    let mut problems: Vec<String> = Vec::new();
    model.visit_params(&mut |mut p: ParamVisit<'_, f32>| {
        let kind = match p.kind {
            ParamKind::Trainable => "param",
            ParamKind::State => "state",
        };
        match by_key.remove(&(p.name.clone(), kind.to_string())) {
            Some(arr) => {
                if arr.shape() == p.value.shape() {
                    p.value.assign(&arr);
                } else {
                    problems.push(format!(
                        "'{}': checkpoint shape {:?}, model shape {:?}",
                        p.name,
                        arr.shape(),
                        p.value.shape()
                    ));
                }
            }
            None => problems.push(format!("'{}': missing from checkpoint", p.name)),
        }
    });
    for (name, kind) in by_key.keys() {
        problems.push(format!("'{name}' ({kind}): not used by the model"));
    }
    if !problems.is_empty() {
        return Err(Error::checkpoint(format!(
            "array mismatches: {}",
            problems.join("; ")
        )));
    }

    let optimizer = match &manifest.optimizer {
        Some(meta) => {
            let tc = manifest.train_config;
            let mut opt = Optimizer::new(
                meta.kind,
                tc.map(|c| c.learning_rate).unwrap_or(0.0),
                tc.map(|c| c.decay).unwrap_or(0.0),
            );
            let mut ms: Vec<(String, ArrayD<f32>)> = Vec::new();
            let mut vs: Vec<(String, ArrayD<f32>)> = Vec::new();
            for (meta, arr) in &stored {
                match meta.kind.as_str() {
                    "opt_m" => ms.push((meta.name.clone(), arr.clone())),
                    "opt_v" => vs.push((meta.name.clone(), arr.clone())),
                    _ => {}
                }
            }
            let slots = ms
                .into_iter()
                .zip(vs)
                .map(|((name, m), (vname, v))| {
                    if name != vname {
                        return Err(Error::checkpoint(format!(
                            "optimizer moments misaligned: '{name}' vs '{vname}'"
                        )));
                    }
                    Ok((name, m, v))
                })
                .collect::<Result<Vec<_>>>()?;
            opt.restore_state(meta.step_count, slots);
            Some(opt)
        }
        None => None,
    };

    Ok(Checkpoint {
        model,
        train_config: manifest.train_config,
        epoch: manifest.epoch,
        metrics: manifest.metrics,
        optimizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbones::Mode;
    use ndarray::Array4;

    fn tiny_model() -> Model<f32> {
        let spec = BackboneSpec::new(Arch::Lenet5, 16, 0.5, 2);
        build_backbone(&spec, 11).unwrap()
    }

    #[test]
    fn roundtrip_reproduces_predictions_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut model = tiny_model();
        // move parameters off their init values
        let x = Array4::from_shape_fn((4, 3, 16, 16), |(n, c, i, j)| {
            ((n + c + i + j) % 5) as f32 / 5.0
        });
        let (_, cache) = model.forward(&x, Mode::Train).unwrap();
        let dlogits = ndarray::Array2::from_elem((4, 2), 0.1f32);
        model.backward(&cache, &dlogits);
        let mut opt = Optimizer::new(OptimizerKind::Adam, 1e-3, 0.0);
        opt.step(&mut model, None).unwrap();

        let before = model.predict(&x).unwrap();
        save_checkpoint(&mut model, None, Some(&opt), 3, None, &path).unwrap();
        let mut loaded = load_checkpoint(&path, Some(Arch::Lenet5)).unwrap();
        assert_eq!(loaded.epoch, 3);
        let after = loaded.model.predict(&x).unwrap();
        assert_eq!(before, after);
        assert_eq!(loaded.optimizer.as_ref().unwrap().step_count(), 1);
    }

    #[test]
    fn arch_mismatch_is_named_in_the_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut model = tiny_model();
        save_checkpoint(&mut model, None, None, 0, None, &path).unwrap();
        let err = load_checkpoint(&path, Some(Arch::Resnet50)).err().unwrap();
        let msg = err.to_string();
        assert!(msg.contains("resnet50") && msg.contains("lenet5"), "{msg}");
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut model = tiny_model();
        save_checkpoint(&mut model, None, None, 0, None, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 99; // format version word
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path, None).err().unwrap();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn shape_mismatch_lists_the_offending_array() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut model = tiny_model();
        save_checkpoint(&mut model, None, None, 0, None, &path).unwrap();

        // rewrite the manifest, swapping two unequal dims of one array:
        // same element count (data section stays aligned), wrong shape
        let bytes = std::fs::read(&path).unwrap();
        let mlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let mut manifest: serde_json::Value =
            serde_json::from_slice(&bytes[20..20 + mlen]).unwrap();
        let arrays = manifest["arrays"].as_array().unwrap().clone();
        let (idx, d0, d1) = arrays
            .iter()
            .enumerate()
            .find_map(|(i, a)| {
                let shape = a["shape"].as_array()?;
                for d0 in 0..shape.len() {
                    for d1 in d0 + 1..shape.len() {
                        if shape[d0] != shape[d1] {
                            return Some((i, d0, d1));
                        }
                    }
                }
                None
            })
            .expect("some array has unequal dims");
        let shape = manifest["arrays"][idx]["shape"].as_array().unwrap().clone();
        manifest["arrays"][idx]["shape"][d0] = shape[d1].clone();
        manifest["arrays"][idx]["shape"][d1] = shape[d0].clone();
        let name = manifest["arrays"][idx]["name"]
            .as_str()
            .unwrap()
            .to_string();
        let new_manifest = serde_json::to_vec(&manifest).unwrap();
        let mut out = Vec::new();
        out.extend_from_slice(&bytes[..12]);
        out.extend_from_slice(&(new_manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&new_manifest);
        out.extend_from_slice(&bytes[20 + mlen..]);
        std::fs::write(&path, &out).unwrap();

        let err = load_checkpoint(&path, None).err().unwrap();
        assert!(err.to_string().contains(&name), "{err}");
    }
}
