//! Checkpoint layout: the 4-byte magic `DGN1`, a little-endian `u32` header
//! length, a JSON header, then every parameter as little-endian `f32` in
//! header order.

use std::fs;
use std::path::Path;

use goalshape_diff::Tensor;
use serde::{Deserialize, Serialize};

use super::{layer_shapes, ModelParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DGN1";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Layer {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    n: usize,
    layers: Vec<Layer>,
    /// Free-form echo of the training configuration.
    #[serde(default)]
    config: serde_json::Value,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CheckpointCorrupt(msg.into())
}

/// Writes `params`; values are stored as `f32`.
pub fn save_model(params: &ModelParams, config: &serde_json::Value, path: &Path) -> Result<()> {
    params.validate()?;
    let header = Header {
        version: VERSION,
        n: params.n,
        layers: layer_shapes(params.n)
            .into_iter()
            .map(|(name, shape)| Layer {
                name: name.to_string(),
                shape,
            })
            .collect(),
        config: config.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| corrupt(e.to_string()))?;
    let mut bytes = Vec::with_capacity(8 + json.len() + 4 * params.count());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    for t in &params.tensors {
        for &v in t.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads a checkpoint. With `expected_n`, a header declaring a different
/// point count is rejected.
pub fn load_model(path: &Path, expected_n: Option<usize>) -> Result<ModelParams> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(corrupt(format!("{}: bad magic", path.display())));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(8..8 + len)
        .ok_or_else(|| corrupt(format!("{}: truncated header", path.display())))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
    if header.version != VERSION {
        return Err(corrupt(format!("unsupported version {}", header.version)));
    }
    if let Some(n) = expected_n {
        if header.n != n {
            return Err(corrupt(format!("checkpoint has N = {}, expected {n}", header.n)));
        }
    }
    let shapes = layer_shapes(header.n);
    let declared: Vec<(&str, &[usize])> = header
        .layers
        .iter()
        .map(|l| (l.name.as_str(), l.shape.as_slice()))
        .collect();
    let expected: Vec<(&str, &[usize])> = shapes.iter().map(|(n, s)| (*n, s.as_slice())).collect();
    if declared != expected {
        return Err(corrupt("layer table does not match the architecture"));
    }
    let total: usize = shapes.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    let blob = &bytes[8 + len..];
    if blob.len() != 4 * total {
        return Err(corrupt(format!(
            "{}: {} parameter bytes, expected {}",
            path.display(),
            blob.len(),
            4 * total
        )));
    }
    let mut values = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
    let tensors = shapes
        .into_iter()
        .map(|(_, shape)| {
            let count = shape.iter().product();
            Tensor::new(shape, values.by_ref().take(count).collect()).map_err(Error::from)
        })
        .collect::<Result<Vec<_>>>()?;
    let params = ModelParams { n: header.n, tensors };
    params.validate().map_err(|e| corrupt(e.to_string()))?;
    Ok(params)
}
