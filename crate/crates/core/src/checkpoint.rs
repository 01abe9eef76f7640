//! Self-describing, versioned parameter container shared by all models.
//!
//! Layout: 8-byte magic, `u32` LE format version, `u64` LE header length,
//! UTF-8 JSON header, then every tensor as raw little-endian `f32` in header
//! order. The header carries a SHA-256 of the tensor payload.

use std::fs;
use std::path::Path;

use ocvad_nn::Param;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"OCVADCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
    payload_sha256: String,
}

/// A decoded checkpoint: model kind, model-specific metadata and named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(TensorEntry, Vec<f32>)>,
}

pub fn write(path: &Path, kind: &str, meta: serde_json::Value, params: &[&Param]) -> Result<()> {
    let mut payload = Vec::with_capacity(params.iter().map(|p| p.len() * 4).sum());
    for p in params {
        payload.extend(p.value.iter().flat_map(|v| v.to_le_bytes()));
    }
    let header = Header {
        kind: kind.to_owned(),
        meta,
        tensors: params
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
            })
            .collect(),
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut bytes = Vec::with_capacity(20 + header.len() + payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    bytes.extend_from_slice(&payload);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn corrupt(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("{}: {what}", path.display()))
}

pub fn read(path: &Path, expected_kind: &str) -> Result<Container> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt(path, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(corrupt(path, format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let header_end = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt(path, "truncated header"))?;
    let header: Header =
        serde_json::from_slice(&bytes[20..header_end]).map_err(|e| corrupt(path, format!("bad header: {e}")))?;
    if header.kind != expected_kind {
        return Err(corrupt(path, format!("holds a `{}` model, expected `{expected_kind}`", header.kind)));
    }
    let payload = &bytes[header_end..];
    let expected_len: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>() * 4).sum();
    if payload.len() != expected_len {
        return Err(corrupt(
            path,
            format!("payload is {} bytes, header describes {expected_len}", payload.len()),
        ));
    }
    if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
        return Err(corrupt(path, "payload checksum mismatch"));
    }
    let mut offset = 0;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        let len = entry.shape.iter().product::<usize>() * 4;
        let values = payload[offset..offset + len]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += len;
        tensors.push((entry, values));
    }
    Ok(Container {
        kind: header.kind,
        meta: header.meta,
        tensors,
    })
}

impl Container {
    /// Copies stored tensors into `params` by name, rejecting missing names and
    /// shape mismatches.
    pub fn restore(&self, params: Vec<&mut Param>) -> Result<()> {
        if params.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                self.tensors.len(),
                params.len()
            )));
        }
        for p in params {
            let (entry, values) = self
                .tensors
                .iter()
                .find(|(e, _)| e.name == p.name)
                .ok_or_else(|| Error::Checkpoint(format!("layer {}: missing from checkpoint", p.name)))?;
            if entry.shape != p.shape {
                return Err(Error::Checkpoint(format!(
                    "layer {}: shape mismatch, checkpoint {:?} vs model {:?}",
                    p.name, entry.shape, p.shape
                )));
            }
            p.value.copy_from_slice(values);
        }
        Ok(())
    }
}
