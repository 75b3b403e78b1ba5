//! Checkpoint file: `BASENCKP`, a little-endian `u32` header length, a JSON header with the
//! configuration and parameter table, then every parameter as little-endian `f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BrainModel, ModelConfig, SelectorConfig};
use crate::error::{Error, Result};
use crate::nn::Tensor;

const MAGIC: &[u8; 8] = b"BASENCKP";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in `f64` values.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model: ModelConfig,
    pub q: usize,
    pub selector: SelectorConfig,
    pub params: Vec<ParamEntry>,
    /// Free-form run information (stage, step, losses).
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn save_checkpoint(model: &BrainModel, path: &Path, meta: serde_json::Value) -> Result<()> {
    let mut params = Vec::new();
    let mut payload = Vec::new();
    let mut offset = 0;
    for (_, p) in model.store.iter() {
        params.push(ParamEntry { name: p.name.clone(), shape: p.value.shape().to_vec(), offset });
        offset += p.value.len();
        for v in p.value.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        model: model.config().clone(),
        q: model.q(),
        selector: model.selector_config().clone(),
        params,
        meta,
    };
    let json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(12 + json.len() + payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    bytes.extend_from_slice(&payload);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Rebuilds the architecture from the stored configuration and restores every parameter.
/// Names, shapes and the payload size must match exactly.
pub fn load_checkpoint(path: &Path) -> Result<(BrainModel, CheckpointHeader)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |msg: String| Error::Format { file: path.to_path_buf(), msg };
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(fail("not a checkpoint (bad magic)".into()));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| fail(format!("header of {hlen} bytes is truncated")))?;
    let header: CheckpointHeader =
        serde_json::from_slice(body).map_err(|e| fail(format!("malformed header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(fail(format!("unsupported format version {}", header.format_version)));
    }
    let payload = &bytes[12 + hlen..];
    let total: usize = header.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    if payload.len() != total * 8 {
        return Err(fail(format!("payload has {} bytes, header declares {}", payload.len(), total * 8)));
    }
    let mut model = BrainModel::new(&header.model, header.q, &header.selector, 0).map_err(|e| fail(e.to_string()))?;
    if model.store.len() != header.params.len() {
        return Err(fail(format!(
            "configuration builds {} parameters, file has {}",
            model.store.len(),
            header.params.len()
        )));
    }
    for entry in &header.params {
        let id = model.store.lookup(&entry.name).ok_or_else(|| fail(format!("unknown parameter {}", entry.name)))?;
        if model.store.value(id).shape() != entry.shape.as_slice() {
            return Err(fail(format!(
                "parameter {} has shape {:?}, configuration expects {:?}",
                entry.name,
                entry.shape,
                model.store.value(id).shape()
            )));
        }
        let n: usize = entry.shape.iter().product();
        if (entry.offset + n) * 8 > payload.len() {
            return Err(fail(format!("parameter {} lies outside the payload", entry.name)));
        }
        let data = payload[entry.offset * 8..(entry.offset + n) * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        model.store.set(id, Tensor::new(&entry.shape, data));
    }
    Ok((model, header))
}
