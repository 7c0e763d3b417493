//! Checkpoint container: an 8-byte magic, a little-endian u32 header
//! length, a JSON header `{version, config, method, label_scale, epoch,
//! validation_metric, run?}`, then raw little-endian f32 parameter blocks
//! in declaration order.

use super::{init_params, Parameters};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAGIC: &[u8; 8] = b"DISAGG01";

/// A trained model plus the bookkeeping needed to evaluate it: the training
/// method name, the label scale that converts between raw currency and
/// internal units, and the validation score that selected it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Parameters,
    pub method: String,
    pub label_scale: f64,
    pub epoch: usize,
    pub validation_metric: f64,
    /// Opaque run configuration recorded for reproducibility.
    pub run_config: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: super::PredictorConfig,
    method: String,
    label_scale: f64,
    epoch: usize,
    validation_metric: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    run: Option<serde_json::Value>,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let header = Header {
        version: 1,
        config: ckpt.params.config.clone(),
        method: ckpt.method.clone(),
        label_scale: ckpt.label_scale,
        epoch: ckpt.epoch,
        validation_metric: ckpt.validation_metric,
        run: ckpt.run_config.clone(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::Format(format!("serializing checkpoint header: {e}")))?;
    let mut out = Vec::with_capacity(16 + header_bytes.len() + ckpt.params.total_len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for t in &ckpt.params.tensors {
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Format(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let header_len = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let body_start = 12 + header_len;
    if bytes.len() < body_start {
        return Err(Error::Format("truncated checkpoint header".to_string()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..body_start])
        .map_err(|e| Error::Format(format!("parsing checkpoint header: {e}")))?;
    if header.version != 1 {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }

    // shapes come from the config; the blocks must match exactly
    let mut params = init_params(&header.config)?;
    let expected = params.total_len() * 4;
    let body = &bytes[body_start..];
    if body.len() != expected {
        return Err(Error::Format(format!(
            "checkpoint has {} parameter bytes, config implies {expected}",
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    params.set_flat(&values)?;

    Ok(Checkpoint {
        params,
        method: header.method,
        label_scale: header.label_scale,
        epoch: header.epoch,
        validation_metric: header.validation_metric,
        run_config: header.run,
    })
}
