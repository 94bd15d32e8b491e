//! Checkpoint directory: `manifest.json` plus `weights.bin`, the flat
//! parameter vector as little-endian f64 in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::nn::{Group, TensorSpec};
use super::{RankerConfig, RankerModel};

pub const CHECKPOINT_FORMAT: u32 = 1;
const MANIFEST: &str = "manifest.json";
const WEIGHTS: &str = "weights.bin";
const DTYPE: &str = "f64-le";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    group: Group,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    dtype: String,
    config: RankerConfig,
    classifier_width: Option<usize>,
    tensors: Vec<TensorEntry>,
    num_parameters: usize,
    weights_sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_checkpoint(model: &RankerModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bytes = Vec::with_capacity(model.num_parameters() * 8);
    for x in model.parameters() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT,
        dtype: DTYPE.into(),
        config: model.config().clone(),
        classifier_width: model.classifier_width(),
        tensors: model.tensors().iter().map(|t| TensorEntry { name: t.name.clone(), shape: t.shape, group: t.group }).collect(),
        num_parameters: model.num_parameters(),
        weights_sha256: hex(&Sha256::digest(&bytes)),
    };
    let wpath = dir.join(WEIGHTS);
    fs::write(&wpath, &bytes).map_err(|e| Error::io(&wpath, e))?;
    let mpath = dir.join(MANIFEST);
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::json(&mpath, e))?;
    fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))
}

fn same_layout(expected: &[TensorSpec], found: &[TensorEntry]) -> bool {
    expected.len() == found.len()
        && expected.iter().zip(found).all(|(a, b)| a.name == b.name && a.shape == b.shape && a.group == b.group)
}

pub fn load_checkpoint(dir: &Path) -> Result<RankerModel> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(&mpath, e))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unsupported format version {} (expected {CHECKPOINT_FORMAT})", manifest.format)));
    }
    if manifest.dtype != DTYPE {
        return Err(Error::Checkpoint(format!("unsupported dtype `{}`", manifest.dtype)));
    }
    let mut model = RankerModel::zeros(manifest.config, manifest.classifier_width)
        .map_err(|e| Error::Checkpoint(format!("invalid checkpoint config: {e}")))?;
    if !same_layout(model.tensors(), &manifest.tensors) || manifest.num_parameters != model.num_parameters() {
        return Err(Error::Checkpoint("tensor shapes do not match the checkpoint config".into()));
    }
    let wpath = dir.join(WEIGHTS);
    let bytes = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    if bytes.len() != model.num_parameters() * 8 {
        return Err(Error::Checkpoint(format!(
            "weights file has {} bytes, expected {}",
            bytes.len(),
            model.num_parameters() * 8
        )));
    }
    if hex(&Sha256::digest(&bytes)) != manifest.weights_sha256 {
        return Err(Error::Checkpoint("weights checksum mismatch".into()));
    }
    for (p, chunk) in model.parameters_mut().iter_mut().zip(bytes.chunks_exact(8)) {
        *p = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    model.check_finite()?;
    Ok(model)
}

/// Loads a checkpoint; its stored config wins over `caller`, with a warning
/// when they differ. Returns whether they differed.
pub fn load_checkpoint_with(dir: &Path, caller: &RankerConfig) -> Result<(RankerModel, bool)> {
    let model = load_checkpoint(dir)?;
    let differs = model.config() != caller;
    if differs {
        log::warn!("checkpoint config in {} overrides the supplied ranker config", dir.display());
    }
    Ok((model, differs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::RepresentationBundle;

    fn model() -> RankerModel {
        let cfg = RankerConfig {
            input_dim: 4,
            string_layers: vec![3],
            context_layers: vec![3],
            final_layers: vec![2],
            invariant_layer: true,
            use_popularity: true,
            ..Default::default()
        };
        RankerModel::init(cfg, 9).unwrap().attach_language_classifier(5, 9).unwrap()
    }

    fn bundle() -> RepresentationBundle {
        RepresentationBundle::new(
            vec![0.1, 0.2, -0.3, 0.4],
            vec![0.5, -0.1, 0.0, 0.2],
            vec![1.0, 0.0, 0.0, -1.0],
            vec![0.3; 4],
            1.5,
        )
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = model();
        save_checkpoint(&m, dir.path()).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.parameters(), m.parameters());
        assert_eq!(back.config(), m.config());
        assert_eq!(back.classifier_width(), Some(5));
        let (a, b) = (m.forward_score(&bundle(), None).unwrap(), back.forward_score(&bundle(), None).unwrap());
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn saving_twice_is_byte_identical() {
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        save_checkpoint(&model(), d1.path()).unwrap();
        save_checkpoint(&model(), d2.path()).unwrap();
        for f in [MANIFEST, WEIGHTS] {
            assert_eq!(fs::read(d1.path().join(f)).unwrap(), fs::read(d2.path().join(f)).unwrap());
        }
    }

    #[test]
    fn truncated_weights_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model(), dir.path()).unwrap();
        let w = dir.path().join(WEIGHTS);
        let bytes = fs::read(&w).unwrap();
        fs::write(&w, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn corrupted_weights_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model(), dir.path()).unwrap();
        let w = dir.path().join(WEIGHTS);
        let mut bytes = fs::read(&w).unwrap();
        bytes[10] ^= 1;
        fs::write(&w, &bytes).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }

    #[test]
    fn version_and_shape_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model(), dir.path()).unwrap();
        let mpath = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&mpath).unwrap();
        fs::write(&mpath, text.replace("\"format\": 1", "\"format\": 2")).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
        fs::write(&mpath, text.replace("\"input_dim\": 4", "\"input_dim\": 5")).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }

    #[test]
    fn stored_config_overrides_caller() {
        let dir = tempfile::tempdir().unwrap();
        let m = model();
        save_checkpoint(&m, dir.path()).unwrap();
        let (back, differs) = load_checkpoint_with(dir.path(), &RankerConfig::default()).unwrap();
        assert!(differs);
        assert_eq!(back.config(), m.config());
        let (_, differs) = load_checkpoint_with(dir.path(), m.config()).unwrap();
        assert!(!differs);
    }
}
