//! Checkpoint directories: one tensor container per kernel plus a JSON
//! manifest with the architecture, the stopping time and a content hash.

use super::TdvParams;
use crate::error::{Result, TdvError};
use crate::tensor::io::{decode, encode};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT: &str = "tdv-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: [usize; 4],
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub channels: usize,
    pub features: usize,
    pub blocks: usize,
    pub nu: f64,
    pub stopping_time: f64,
    pub tensors: Vec<TensorEntry>,
    /// Hex SHA-256 over the encoded tensors in manifest order.
    pub content_hash: String,
}

/// A trained regularizer together with its learned stopping time.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: TdvParams,
    pub stopping_time: f64,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn content_hash(params: &TdvParams) -> String {
    let mut h = Sha256::new();
    for t in params.tensors() {
        h.update(encode(t));
    }
    hex(&h.finalize())
}

pub fn save_checkpoint(dir: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<CheckpointManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let p = &ckpt.params;
    let mut entries = Vec::new();
    for (name, t) in p.names().into_iter().zip(p.tensors()) {
        let file = format!("{name}.tensor");
        fs::write(dir.join(&file), encode(t))?;
        entries.push(TensorEntry {
            name,
            file,
            shape: t.shape(),
        });
    }
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        version: FORMAT_VERSION,
        channels: p.channels,
        features: p.features,
        blocks: p.macro_count(),
        nu: p.nu,
        stopping_time: ckpt.stopping_time,
        tensors: entries,
        content_hash: content_hash(p),
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
    if manifest.format != FORMAT || manifest.version != FORMAT_VERSION {
        return Err(TdvError::Format(format!(
            "unsupported checkpoint {} v{}",
            manifest.format, manifest.version
        )));
    }
    let mut params = TdvParams::zeros(manifest.channels, manifest.features, manifest.blocks, manifest.nu);
    let names = params.names();
    if names.len() != manifest.tensors.len() {
        return Err(TdvError::Format(format!(
            "manifest lists {} tensors, architecture needs {}",
            manifest.tensors.len(),
            names.len()
        )));
    }
    for ((slot, name), entry) in params.tensors_mut().into_iter().zip(&names).zip(&manifest.tensors) {
        if &entry.name != name {
            return Err(TdvError::Format(format!(
                "expected tensor '{name}', manifest has '{}'",
                entry.name
            )));
        }
        let t = decode(&fs::read(dir.join(&entry.file))?)?;
        if t.shape() != slot.shape() || t.shape() != entry.shape {
            return Err(TdvError::Format(format!(
                "tensor '{name}' has shape {:?}, expected {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    if content_hash(&params) != manifest.content_hash {
        return Err(TdvError::Format("checkpoint content hash mismatch".into()));
    }
    Ok(Checkpoint {
        params,
        stopping_time: manifest.stopping_time,
    })
}
