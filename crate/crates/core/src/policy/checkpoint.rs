//! Checkpoint files.
//!
//! ```text
//! "VTLP" | version: u32 LE | descriptor length: u32 LE | descriptor JSON | theta: f32 LE * n
//!        [ | norm shift: f32 LE * input_dim | norm scale: f32 LE * input_dim ]
//! ```
//!
//! The norm block is present when the descriptor has `"input_norm": true`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Architecture, InputNorm, PolicyModel};
use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"VTLP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Descriptor {
    architecture: Architecture,
    param_count: usize,
    #[serde(default)]
    input_norm: bool,
    #[serde(default)]
    meta: serde_json::Value,
}

pub fn encode_checkpoint(model: &PolicyModel, meta: &serde_json::Value) -> Result<Vec<u8>> {
    let desc = Descriptor {
        architecture: model.arch.clone(),
        param_count: model.theta.len(),
        input_norm: model.norm.is_some(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&desc)?;
    let mut out = Vec::with_capacity(12 + json.len() + 4 * model.theta.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let norm = model.norm.iter().flat_map(|n| n.shift.iter().chain(&n.scale));
    for v in model.theta.iter().chain(norm) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))
}

/// Parses a checkpoint, returning the model and its metadata.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(PolicyModel, serde_json::Value)> {
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32_at(bytes, 4)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = u32_at(bytes, 8)? as usize;
    let json = bytes
        .get(12..12 + len)
        .ok_or_else(|| Error::Checkpoint("truncated descriptor".into()))?;
    let desc: Descriptor = serde_json::from_slice(json)?;
    desc.architecture.validate()?;
    let n = desc.architecture.param_count();
    if desc.param_count != n {
        return Err(Error::Checkpoint(format!(
            "descriptor lists {} parameters, architecture needs {n}",
            desc.param_count
        )));
    }
    let d = if desc.input_norm { desc.architecture.input_dim } else { 0 };
    let body = &bytes[12 + len..];
    if body.len() != 4 * (n + 2 * d) {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            4 * (n + 2 * d),
            body.len()
        )));
    }
    let mut values: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let norm = desc.input_norm.then(|| {
        let scale = values.split_off(n + d);
        let shift = values.split_off(n);
        InputNorm { shift, scale }
    });
    Ok((
        PolicyModel {
            arch: desc.architecture,
            theta: values,
            norm,
        },
        desc.meta,
    ))
}

pub fn save_checkpoint(path: &Path, model: &PolicyModel, meta: &serde_json::Value) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model, meta)?).at(path)
}

pub fn load_checkpoint(path: &Path) -> Result<(PolicyModel, serde_json::Value)> {
    decode_checkpoint(&std::fs::read(path).at(path)?)
}
