//! Binary checkpoint: `b"SLAGCKPT"`, `u32` version, `u32` header length, a
//! JSON header, then every tensor as little-endian scalars in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelError, ModelSpec, ModelState};
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SLAGCKPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub scalar: String,
    pub spec: ModelSpec,
    pub params: Vec<TensorEntry>,
    pub buffers: Vec<TensorEntry>,
    /// Free-form provenance (run seed, epoch, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

fn header_for<T: Scalar>(model: &Model<T>, meta: serde_json::Value) -> CheckpointHeader {
    let (pnames, bnames) = model.tensor_names();
    CheckpointHeader {
        version: CHECKPOINT_VERSION,
        scalar: T::NAME.to_string(),
        spec: model.spec().clone(),
        params: pnames
            .into_iter()
            .zip(model.params())
            .map(|(name, p)| TensorEntry { name, len: p.len() })
            .collect(),
        buffers: bnames
            .into_iter()
            .zip(model.buffers())
            .map(|(name, b)| TensorEntry {
                name,
                len: b.value.len(),
            })
            .collect(),
        meta,
    }
}

pub fn encode_checkpoint<T: Scalar>(model: &Model<T>, meta: serde_json::Value) -> Vec<u8> {
    let header = serde_json::to_vec(&header_for(model, meta)).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for p in model.params() {
        p.value.iter().for_each(|v| v.write_le(&mut out));
    }
    for b in model.buffers() {
        b.value.iter().for_each(|v| v.write_le(&mut out));
    }
    out
}

pub fn save_checkpoint<T: Scalar>(
    model: &Model<T>,
    path: &Path,
    meta: serde_json::Value,
) -> Result<(), ModelError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode_checkpoint(model, meta))?;
    Ok(())
}

fn split_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8]), ModelError> {
    let bad = |m: &str| ModelError::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(body).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    Ok((header, &bytes[16 + hlen..]))
}

pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader, ModelError> {
    let bytes = fs::read(path)?;
    Ok(split_header(&bytes)?.0)
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<(Model<T>, CheckpointHeader), ModelError> {
    let (header, mut data) = split_header(bytes)?;
    if header.scalar != T::NAME {
        return Err(ModelError::Checkpoint(format!(
            "checkpoint holds {} values, requested {}",
            header.scalar,
            T::NAME
        )));
    }
    let mut model = Model::<T>::build(&header.spec, 0)?;
    let expected = header_for(&model, serde_json::Value::Null);
    if expected.params != header.params || expected.buffers != header.buffers {
        return Err(ModelError::Checkpoint("tensor layout does not match the architecture".into()));
    }
    let mut take = |len: usize| -> Result<Vec<T>, ModelError> {
        let nbytes = len * T::BYTES;
        if data.len() < nbytes {
            return Err(ModelError::Checkpoint("truncated tensor data".into()));
        }
        let v = data[..nbytes].chunks(T::BYTES).map(T::read_le).collect();
        data = &data[nbytes..];
        Ok(v)
    };
    let state = ModelState {
        params: header.params.iter().map(|e| take(e.len)).collect::<Result<_, _>>()?,
        buffers: header.buffers.iter().map(|e| take(e.len)).collect::<Result<_, _>>()?,
    };
    if !data.is_empty() {
        return Err(ModelError::Checkpoint("trailing bytes after tensor data".into()));
    }
    model.load_state(&state)?;
    Ok((model, header))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(Model<T>, CheckpointHeader), ModelError> {
    decode_checkpoint(&fs::read(path)?)
}
