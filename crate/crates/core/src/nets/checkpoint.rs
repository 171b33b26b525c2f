//! Checkpoint container: one file holding every parameter tree keyed by
//! component name, plus the training step and the model config hash.
//!
//! Layout: magic, little-endian u64 header length, JSON header (names,
//! shapes, offsets), then raw little-endian f64 tensor data.

use super::bundle::ModelBundle;
use super::tensor::Tensor;
use crate::config::ModelConfig;
use crate::error::{data_err, Result, VoltaError};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"VOLTACK1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    step: u64,
    epoch: u64,
    config_hash: String,
    model: ModelConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset in f64 elements from the start of the data section.
    offset: u64,
}

#[derive(Debug)]
pub struct CheckpointMeta {
    pub step: u64,
    pub epoch: u64,
    pub config_hash: String,
}

pub fn save_checkpoint(
    path: &Path,
    bundle: &ModelBundle,
    step: u64,
    epoch: u64,
    config_hash: &str,
) -> Result<()> {
    let named = bundle.named_params();
    let mut tensors = Vec::with_capacity(named.len());
    let mut offset = 0u64;
    for (name, t) in &named {
        tensors.push(TensorEntry { name: name.clone(), shape: t.shape.clone(), offset });
        offset += t.len() as u64;
    }
    let header = Header {
        format_version: 1,
        step,
        epoch,
        config_hash: config_hash.to_string(),
        model: bundle.config.clone(),
        tensors,
    };
    let header_bytes = serde_json::to_vec(&header)?;

    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(MAGIC)?;
    file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    file.write_all(&header_bytes)?;
    for (_, t) in &named {
        for v in &t.data {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    file.flush()?;
    Ok(())
}

/// Load a checkpoint; when `expected_hash` is given a mismatch is refused.
pub fn load_checkpoint(path: &Path, expected_hash: Option<&str>) -> Result<(ModelBundle, CheckpointMeta)> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path).map_err(|e| {
        VoltaError::File { path: path.to_path_buf(), reason: e.to_string() }
    })?);
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(data_err(format!("{}: not a checkpoint file", path.display())));
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    if header.format_version != 1 {
        return Err(data_err(format!(
            "{}: unsupported checkpoint version {}",
            path.display(),
            header.format_version
        )));
    }
    if let Some(expected) = expected_hash {
        if header.config_hash != expected {
            return Err(crate::error::config_err(format!(
                "checkpoint {} was trained under config hash {} but the current config hashes to {expected}; refusing",
                path.display(),
                header.config_hash
            )));
        }
    }

    let mut data = Vec::new();
    file.read_to_end(&mut data)?;
    let floats: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
        .collect();

    // Seed value is irrelevant here; every tensor is overwritten below.
    let mut bundle = ModelBundle::init(&header.model, 0);
    let mut by_name: std::collections::BTreeMap<&str, (&[usize], u64)> = Default::default();
    for entry in &header.tensors {
        by_name.insert(entry.name.as_str(), (&entry.shape, entry.offset));
    }
    for (name, tensor) in bundle.named_params_mut() {
        let (shape, offset) = by_name
            .remove(name.as_str())
            .ok_or_else(|| data_err(format!("{}: missing tensor {name}", path.display())))?;
        if shape != tensor.shape.as_slice() {
            return Err(data_err(format!(
                "{}: tensor {name} has shape {:?}, expected {:?}",
                path.display(),
                shape,
                tensor.shape
            )));
        }
        let start = offset as usize;
        let end = start + tensor.len();
        if end > floats.len() {
            return Err(data_err(format!("{}: truncated tensor data", path.display())));
        }
        tensor.data.copy_from_slice(&floats[start..end]);
    }
    if let Some((name, _)) = by_name.into_iter().next() {
        return Err(data_err(format!("{}: unexpected tensor {name}", path.display())));
    }

    Ok((
        bundle,
        CheckpointMeta { step: header.step, epoch: header.epoch, config_hash: header.config_hash },
    ))
}

/// Bitwise equality of two parameter trees; used by the freeze contract test
/// and by checkpoint verification.
pub fn params_identical(a: &[(String, &Tensor)], b: &[(String, &Tensor)]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|((na, ta), (nb, tb))| {
            na == nb && ta.shape == tb.shape && ta.data.iter().zip(&tb.data).all(|(x, y)| x.to_bits() == y.to_bits())
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            small4_channels: [2, 2, 3, 3],
            feature_dim: 8,
            env_dim: 8,
            projector_hidden: 4,
            embed_dim: 8,
            predictor_hidden: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.vck");
        let bundle = ModelBundle::init(&tiny_config(), 42);
        save_checkpoint(&path, &bundle, 17, 3, "deadbeef").unwrap();
        let (loaded, meta) = load_checkpoint(&path, Some("deadbeef")).unwrap();
        assert_eq!(meta.step, 17);
        assert_eq!(meta.epoch, 3);
        assert!(params_identical(&bundle.named_params(), &loaded.named_params()));
    }

    #[test]
    fn hash_mismatch_is_refused_as_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.vck");
        let bundle = ModelBundle::init(&tiny_config(), 0);
        save_checkpoint(&path, &bundle, 0, 0, "aaaa").unwrap();
        let err = load_checkpoint(&path, Some("bbbb")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
