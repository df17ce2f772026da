//! SSRL1 checkpoint container.
//!
//! Layout: the 5-byte magic `SSRL1`, a little-endian `u64` header length,
//! a UTF-8 JSON header, then the raw little-endian tensor payload. The
//! header lists `(name, shape, dtype, offset)` per tensor, with offsets
//! relative to the start of the payload, plus a free-form `meta` object.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DType, Real, Tensor};

pub const MAGIC: &[u8; 5] = b"SSRL1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an SSRL1 checkpoint")]
    BadMagic,
    #[error("malformed checkpoint header: {0}")]
    BadHeader(String),
    #[error("tensor `{name}` is stored as {stored:?}, requested {requested:?}")]
    DtypeMismatch { name: String, stored: DType, requested: DType },
    #[error("tensor `{0}` not found in checkpoint")]
    MissingTensor(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Tensors and metadata read back from a checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub tensors: Vec<(String, Tensor<T>)>,
    pub meta: serde_json::Value,
}

impl<T: Real> Checkpoint<T> {
    pub fn get(&self, name: &str) -> Result<&Tensor<T>, CheckpointError> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))
    }
}

pub fn write_checkpoint<T: Real, W: Write>(
    mut writer: W,
    tensors: &[(&str, &Tensor<T>)],
    meta: &serde_json::Value,
) -> Result<(), CheckpointError> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: T::DTYPE,
            offset,
        });
        offset += (t.numel() * T::DTYPE.size()) as u64;
    }
    let header = serde_json::to_vec(&Header {
        tensors: entries,
        meta: meta.clone(),
    })
    .map_err(|e| CheckpointError::BadHeader(e.to_string()))?;

    writer.write_all(MAGIC)?;
    writer.write_all(&(header.len() as u64).to_le_bytes())?;
    writer.write_all(&header)?;
    let mut buf = Vec::new();
    for (_, t) in tensors {
        buf.clear();
        for &x in t.data() {
            x.write_le(&mut buf);
        }
        writer.write_all(&buf)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_checkpoint<T: Real, R: Read>(mut reader: R) -> Result<Checkpoint<T>, CheckpointError> {
    let mut magic = [0u8; 5];
    reader.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut len = [0u8; 8];
    reader.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut header = vec![0u8; len];
    reader.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header).map_err(|e| CheckpointError::BadHeader(e.to_string()))?;

    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;

    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        if entry.dtype != T::DTYPE {
            return Err(CheckpointError::DtypeMismatch {
                name: entry.name,
                stored: entry.dtype,
                requested: T::DTYPE,
            });
        }
        let numel: usize = entry.shape.iter().product();
        let size = entry.dtype.size();
        let start = entry.offset as usize;
        let end = start + numel * size;
        if end > payload.len() {
            return Err(CheckpointError::BadHeader(format!("tensor `{}` extends past end of payload", entry.name)));
        }
        let data = payload[start..end].chunks_exact(size).map(T::read_le).collect();
        let tensor = Tensor::new(entry.shape, data).map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
        tensors.push((entry.name, tensor));
    }
    Ok(Checkpoint {
        tensors,
        meta: header.meta,
    })
}

pub fn save_checkpoint<T: Real>(
    path: impl AsRef<Path>,
    tensors: &[(&str, &Tensor<T>)],
    meta: &serde_json::Value,
) -> Result<(), CheckpointError> {
    let file = File::create(path)?;
    write_checkpoint(BufWriter::new(file), tensors, meta)
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Checkpoint<T>, CheckpointError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
