//! Checkpoint container:
//!
//! ```text
//! magic "RGRAPHCK" | u32 LE format version | u32 LE header length
//! | JSON header | parameter values, little-endian, in layout order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layout, ModelConfig, ModelError, Params};
use crate::scene::catalog;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RGRAPHCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
    /// Halves the file; values are rounded on save.
    F32,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    catalog_version: String,
    catalog_hash: String,
    precision: Precision,
    n_params: usize,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(params: &Params, path: &Path) -> Result<(), ModelError> {
    save_checkpoint_with(params, path, Precision::F64)
}

pub fn save_checkpoint_with(params: &Params, path: &Path, precision: Precision) -> Result<(), ModelError> {
    let cat = catalog();
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        config: params.config.clone(),
        catalog_version: cat.version.clone(),
        catalog_hash: cat.hash.clone(),
        precision,
        n_params: params.len(),
        tensors: params
            .layout
            .tensors
            .iter()
            .map(|(name, s)| TensorEntry {
                name: name.clone(),
                shape: [s.rows, s.cols],
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut buf = Vec::with_capacity(16 + json.len() + params.len() * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for &v in &params.values {
        match precision {
            Precision::F64 => buf.extend_from_slice(&v.to_le_bytes()),
            Precision::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

fn incompatible(msg: impl Into<String>) -> ModelError {
    ModelError::IncompatibleCheckpoint(msg.into())
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, ModelError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| incompatible("truncated preamble"))
}

pub fn load_checkpoint(path: &Path) -> Result<Params, ModelError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(incompatible("bad magic"));
    }
    let version = read_u32(&bytes, 8)?;
    if version != CHECKPOINT_VERSION {
        return Err(incompatible(format!(
            "format version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let header_len = read_u32(&bytes, 12)? as usize;
    let body_start = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| incompatible("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..body_start])
        .map_err(|e| incompatible(format!("unreadable header: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(incompatible("header version disagrees with preamble"));
    }
    let cat = catalog();
    if header.catalog_hash != cat.hash {
        return Err(incompatible(format!(
            "catalog {} ({}) differs from the built-in catalog {}",
            header.catalog_version, header.catalog_hash, cat.version
        )));
    }
    header
        .config
        .validate()
        .map_err(|e| incompatible(e.to_string()))?;
    let layout = Layout::new(&header.config);
    let declared: Vec<(&str, [usize; 2])> = header
        .tensors
        .iter()
        .map(|t| (t.name.as_str(), t.shape))
        .collect();
    let expected: Vec<(&str, [usize; 2])> = layout
        .tensors
        .iter()
        .map(|(n, s)| (n.as_str(), [s.rows, s.cols]))
        .collect();
    if declared != expected || header.n_params != layout.total {
        return Err(incompatible("tensor table does not match the config"));
    }
    let width = match header.precision {
        Precision::F64 => 8,
        Precision::F32 => 4,
    };
    let body = &bytes[body_start..];
    if body.len() != layout.total * width {
        return Err(incompatible(format!(
            "expected {} payload bytes, found {}",
            layout.total * width,
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(width)
        .map(|c| match header.precision {
            Precision::F64 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
            Precision::F32 => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
        })
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(incompatible("non-finite parameter"));
    }
    Ok(Params {
        config: header.config,
        layout,
        values,
    })
}
