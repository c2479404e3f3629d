//! Checkpoint container: magic bytes, a length-prefixed JSON manifest, then
//! every parameter array as raw little-endian `f64` in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_reference_model, Architecture, Classifier};
use crate::error::{PteError, Result};

const MAGIC: &[u8; 8] = b"PTECKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub architecture: Architecture,
    pub classes: usize,
    pub seed: u64,
    pub train_config_hash: Option<String>,
    pub frozen: bool,
    pub arrays: Vec<ArrayEntry>,
}

pub fn save_checkpoint(model: &Classifier, path: &Path) -> Result<()> {
    let manifest = CheckpointManifest {
        architecture: model.arch.clone(),
        classes: model.classes,
        seed: model.seed,
        train_config_hash: model.train_config_hash.clone(),
        frozen: model.frozen,
        arrays: model
            .specs
            .iter()
            .map(|s| ArrayEntry {
                name: s.name.clone(),
                shape: s.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut bytes = Vec::with_capacity(16 + json.len() + model.parameter_count() * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for p in &model.params {
        for v in p {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PteError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| PteError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Classifier> {
    let bytes = fs::read(path).map_err(|e| PteError::io(path, e))?;
    let bad = |msg: &str| PteError::Data(format!("checkpoint {}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let json_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let json = bytes
        .get(16..16 + json_len)
        .ok_or_else(|| bad("truncated manifest"))?;
    let manifest: CheckpointManifest =
        serde_json::from_slice(json).map_err(|e| bad(&format!("bad manifest: {e}")))?;
    let mut model = build_reference_model(&manifest.architecture, manifest.classes, manifest.seed)?;
    let layout: Vec<ArrayEntry> = model
        .specs
        .iter()
        .map(|s| ArrayEntry {
            name: s.name.clone(),
            shape: s.shape.clone(),
        })
        .collect();
    if layout != manifest.arrays {
        return Err(bad("array list does not match the declared architecture"));
    }
    let mut offset = 16 + json_len;
    for p in &mut model.params {
        let end = offset + p.len() * 8;
        let chunk = bytes
            .get(offset..end)
            .ok_or_else(|| bad("truncated array data"))?;
        for (v, b) in p.iter_mut().zip(chunk.chunks_exact(8)) {
            *v = f64::from_le_bytes(b.try_into().unwrap());
        }
        offset = end;
    }
    if offset != bytes.len() {
        return Err(bad("trailing bytes after array data"));
    }
    model.frozen = manifest.frozen;
    model.train_config_hash = manifest.train_config_hash;
    Ok(model)
}
