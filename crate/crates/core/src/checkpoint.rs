//! Weight checkpoint file.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4     | magic `CKSG` |
//! | 4     | format version (`u32`, currently 1) |
//! | 8     | header length `n` (`u64`) |
//! | n     | UTF-8 JSON header |
//! | ...   | payload: every tensor's `f64` values, row-major, in header order |
//!
//! The header is `{"config": NetworkConfig, "tensors": [{"name", "shape",
//! "offset"}]}` where `offset` counts bytes from the start of the payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"CKSG";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: NetworkConfig,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode(config: &NetworkConfig, store: &ParamStore) -> Vec<u8> {
    let mut offset = 0u64;
    let tensors = store
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry { name: name.to_string(), shape: t.shape().to_vec(), offset };
            offset += 8 * t.numel() as u64;
            e
        })
        .collect();
    let header = serde_json::to_vec(&Header { config: config.clone(), tensors }).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in store.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint(format!("file truncated in {what}")));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn decode(mut bytes: &[u8]) -> Result<(NetworkConfig, ParamStore)> {
    if take(&mut bytes, 4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(take(&mut bytes, 4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(take(&mut bytes, 8, "header length")?.try_into().expect("8 bytes"));
    let header: Header = serde_json::from_slice(take(&mut bytes, len as usize, "header")?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let payload = bytes;
    let mut store = ParamStore::new();
    let mut expected = 0u64;
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        if e.offset != expected {
            return Err(Error::Checkpoint(format!("tensor {} at offset {}, expected {expected}", e.name, e.offset)));
        }
        let start = e.offset as usize;
        let raw = payload
            .get(start..start + 8 * n)
            .ok_or_else(|| Error::Checkpoint(format!("payload truncated in tensor {}", e.name)))?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let t = Tensor::new(e.shape.clone(), data).map_err(|err| Error::Checkpoint(format!("tensor {}: {err}", e.name)))?;
        store.add(e.name.clone(), t).map_err(|err| Error::Checkpoint(err.to_string()))?;
        expected += 8 * n as u64;
    }
    if payload.len() as u64 != expected {
        return Err(Error::Checkpoint(format!(
            "payload holds {} bytes, header describes {expected}",
            payload.len()
        )));
    }
    Ok((header.config, store))
}

pub fn save(path: &Path, model: &Model) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode(&model.config, &model.store)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (config, store) = decode(&bytes)?;
    Model::from_store(config, store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_corruption() {
        let m = Model::new(NetworkConfig::micro(), 3).unwrap();
        let bytes = encode(&m.config, &m.store);
        let (cfg, store) = decode(&bytes).unwrap();
        assert_eq!(cfg, m.config);
        assert_eq!(store, m.store);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
    }
}
