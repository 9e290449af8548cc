//! Parameter checkpoints: `u64` little-endian manifest length, a JSON
//! manifest of names, shapes and byte offsets, then the raw little-endian
//! `f64` blobs. Values round-trip bit for bit.

use std::fs;
use std::path::Path;

use mmdr_core::gridnet::{ParamStore, Shape, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub params: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Shape,
    /// Byte offset into the blob section.
    pub offset: u64,
}

/// Serializes every parameter whose name starts with one of `prefixes`.
pub fn encode(store: &ParamStore, prefixes: &[&str]) -> Vec<u8> {
    let mut params = Vec::new();
    let mut blob = Vec::new();
    for (_, name, value) in store.iter() {
        if !prefixes.iter().any(|p| name.starts_with(p)) {
            continue;
        }
        params.push(ManifestEntry {
            name: name.to_string(),
            shape: value.shape(),
            offset: blob.len() as u64,
        });
        for v in value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = serde_json::to_vec(&Manifest {
        version: FORMAT_VERSION,
        params,
    })
    .expect("manifest serializes");
    let mut out = Vec::with_capacity(8 + manifest.len() + blob.len());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&blob);
    out
}

/// Parses a checkpoint into a standalone store, in manifest order.
pub fn decode(bytes: &[u8], path: &Path) -> Result<ParamStore> {
    let fail = |detail: String| Error::Checkpoint {
        path: path.to_path_buf(),
        detail,
    };
    let head: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| fail("truncated header".into()))?;
    let mlen = u64::from_le_bytes(head) as usize;
    let mbytes = bytes
        .get(8..8usize.saturating_add(mlen))
        .ok_or_else(|| fail("truncated manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(mbytes).map_err(|e| fail(format!("bad manifest: {e}")))?;
    if manifest.version != FORMAT_VERSION {
        return Err(fail(format!("unsupported version {}", manifest.version)));
    }
    let blob = &bytes[8 + mlen..];
    let mut store = ParamStore::new();
    let mut expected_end = 0usize;
    for e in manifest.params {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + 8 * n;
        let raw = blob
            .get(start..end)
            .ok_or_else(|| fail(format!("blob of {} out of bounds", e.name)))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        store.add(e.name, Tensor::from_vec(e.shape, data)?)?;
        expected_end = expected_end.max(end);
    }
    if expected_end != blob.len() {
        return Err(fail(format!("{} trailing bytes", blob.len() - expected_end)));
    }
    Ok(store)
}

pub fn save(store: &ParamStore, prefixes: &[&str], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(store, prefixes)).map_err(|e| Error::io(path, e))
}

/// Loads `path` into `store`. Every checkpoint entry must exist in the store
/// with the same shape.
pub fn load_into(store: &mut ParamStore, path: &Path) -> Result<usize> {
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let loaded = decode(&bytes, path)?;
    for (_, name, value) in loaded.iter() {
        let id = store.find(name).ok_or_else(|| Error::Checkpoint {
            path: path.to_path_buf(),
            detail: format!("unknown parameter {name}"),
        })?;
        store.set_value(id, value.clone())?;
    }
    Ok(loaded.len())
}
