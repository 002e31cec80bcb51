//! The NamedTensorArchive container.
//!
//! Layout: `b"NTAR"`, version byte `0x01`, an 8-byte little-endian header
//! length, a UTF-8 JSON header listing `{name, shape, offset, nbytes}` per
//! tensor (offsets relative to the payload start), then the payload of
//! little-endian `f32` values.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use anagram_core::model::NamedTensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"NTAR";
pub const VERSION: u8 = 1;
const PREAMBLE: usize = 4 + 1 + 8;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("bad magic bytes, not a tensor archive")]
    BadMagic,
    #[error("unsupported archive version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated header")]
    TruncatedHeader,
    #[error("truncated payload for tensor {name:?}")]
    Truncated { name: String },
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("tensor {name:?} of shape {shape:?} does not fit {nbytes} bytes")]
    ShapeMismatch {
        name: String,
        shape: Vec<usize>,
        nbytes: u64,
    },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    nbytes: u64,
}

fn expected_bytes(shape: &[usize]) -> Option<u64> {
    shape.iter().try_fold(4u64, |acc, &d| acc.checked_mul(d as u64))
}

pub fn encode(tensors: &[NamedTensor]) -> Result<Vec<u8>, ArchiveError> {
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for t in tensors {
        if !seen.insert(t.name.as_str()) {
            return Err(ArchiveError::DuplicateName(t.name.clone()));
        }
        let nbytes = 4 * t.data.len() as u64;
        if expected_bytes(&t.shape) != Some(nbytes) {
            return Err(ArchiveError::ShapeMismatch {
                name: t.name.clone(),
                shape: t.shape.clone(),
                nbytes,
            });
        }
        entries.push(Entry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            offset,
            nbytes,
        });
        offset += nbytes;
    }
    let header = serde_json::to_vec(&entries).map_err(|e| ArchiveError::Header(e.to_string()))?;
    let mut out = Vec::with_capacity(PREAMBLE + header.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>, ArchiveError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(ArchiveError::BadMagic);
    }
    if bytes.len() < PREAMBLE {
        return Err(ArchiveError::TruncatedHeader);
    }
    if bytes[4] != VERSION {
        return Err(ArchiveError::UnsupportedVersion(bytes[4]));
    }
    let header_len = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes"));
    let payload_start = (PREAMBLE as u64)
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len() as u64)
        .ok_or(ArchiveError::TruncatedHeader)? as usize;
    let entries: Vec<Entry> =
        serde_json::from_slice(&bytes[PREAMBLE..payload_start]).map_err(|e| ArchiveError::Header(e.to_string()))?;
    let payload = &bytes[payload_start..];
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        if !seen.insert(e.name.clone()) {
            return Err(ArchiveError::DuplicateName(e.name));
        }
        if expected_bytes(&e.shape) != Some(e.nbytes) {
            return Err(ArchiveError::ShapeMismatch {
                name: e.name,
                shape: e.shape,
                nbytes: e.nbytes,
            });
        }
        let end = e
            .offset
            .checked_add(e.nbytes)
            .filter(|&end| end <= payload.len() as u64);
        let Some(end) = end else {
            return Err(ArchiveError::Truncated { name: e.name });
        };
        let data = payload[e.offset as usize..end as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push(NamedTensor {
            name: e.name,
            shape: e.shape,
            data,
        });
    }
    Ok(out)
}

pub fn save_archive(path: &Path, tensors: &[NamedTensor]) -> Result<(), ArchiveError> {
    let bytes = encode(tensors)?;
    fs::write(path, bytes).map_err(|source| ArchiveError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_archive(path: &Path) -> Result<Vec<NamedTensor>, ArchiveError> {
    let bytes = fs::read(path).map_err(|source| ArchiveError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}
