//! Raw float map files: little-endian f32, row-major, with a JSON sidecar
//! carrying the dimensions. The sidecar path is the map path with its final
//! extension replaced by `json`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize, Deserialize)]
struct MapSidecar {
    height: usize,
    width: usize,
}

/// `maps/a.mu.f32` -> `maps/a.mu.json`
pub fn sidecar_path(map_path: &Path) -> PathBuf {
    map_path.with_extension("json")
}

pub fn write_f32_map(path: &Path, height: usize, width: usize, data: &[f64]) -> Result<()> {
    if data.len() != height * width {
        return Err(Error::shape(format!(
            "map data length {} does not match {}x{}",
            data.len(),
            height,
            width
        )));
    }
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for &v in data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    let sidecar = MapSidecar { height, width };
    std::fs::write(
        sidecar_path(path),
        serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
    )?;
    Ok(())
}

pub fn read_f32_map(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let sidecar = sidecar_path(path);
    let meta: MapSidecar = serde_json::from_str(
        &std::fs::read_to_string(&sidecar)
            .map_err(|e| Error::Format(format!("missing sidecar {}: {e}", sidecar.display())))?,
    )
    .map_err(|e| Error::Format(format!("bad sidecar {}: {e}", sidecar.display())))?;
    let bytes = std::fs::read(path)?;
    let expected = meta.height * meta.width * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "map {} has {} bytes, sidecar implies {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok((meta.height, meta.width, data))
}
