//! Checkpoint file format.
//!
//! One file: a single-line JSON manifest headed by a format-version integer,
//! listing parameter names, shapes and byte offsets; then the concatenated
//! row-major IEEE-754 double-precision arrays, little-endian. Offsets are
//! relative to the first byte after the manifest's newline.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Params;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint does not match the model: {0}")]
    Incompatible(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    params: Vec<ManifestEntry>,
}

pub fn save(path: &Path, params: &Params) -> Result<(), CheckpointError> {
    let mut entries = Vec::with_capacity(params.len());
    let mut offset = 0u64;
    for (name, tensor) in params.iter() {
        entries.push(ManifestEntry {
            name: name.to_string(),
            shape: tensor.shape().to_vec(),
            offset,
        });
        offset += (tensor.numel() * 8) as u64;
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        params: entries,
    };
    let mut out = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(&mut out, &manifest)?;
    out.write_all(b"\n")?;
    for (_, tensor) in params.iter() {
        for &v in tensor.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Loads a checkpoint into an existing parameter set, which must match the
/// manifest name-for-name and shape-for-shape.
pub fn load_into(path: &Path, params: &mut Params) -> Result<(), CheckpointError> {
    let mut file = fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CheckpointError::Incompatible("missing manifest line".into()))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[..newline])?;
    if manifest.version != FORMAT_VERSION {
        return Err(CheckpointError::Version(manifest.version));
    }
    if manifest.params.len() != params.len() {
        return Err(CheckpointError::Incompatible(format!(
            "{} parameters in file, {} in model",
            manifest.params.len(),
            params.len()
        )));
    }
    let blob = &bytes[newline + 1..];
    for entry in &manifest.params {
        let id = params.id(&entry.name).ok_or_else(|| {
            CheckpointError::Incompatible(format!("unknown parameter {:?}", entry.name))
        })?;
        let tensor = params.get_mut(id);
        if tensor.shape() != entry.shape.as_slice() {
            return Err(CheckpointError::Incompatible(format!(
                "{}: shape {:?} in file, {:?} in model",
                entry.name,
                entry.shape,
                tensor.shape()
            )));
        }
        let start = entry.offset as usize;
        let end = start + tensor.numel() * 8;
        if end > blob.len() {
            return Err(CheckpointError::Incompatible(format!(
                "{}: data out of bounds",
                entry.name
            )));
        }
        for (i, chunk) in blob[start..end].chunks_exact(8).enumerate() {
            tensor.data_mut()[i] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    Ok(())
}
