//! Binary checkpoint format.
//!
//! ```text
//! "SPKTCKP1"              8-byte magic
//! header_len: u64 LE      length of the JSON header in bytes
//! header: JSON            {"tensors": [{"name", "shape", "offset"}, ...]}
//! data                    little-endian f32 arrays; `offset` is in bytes from
//!                         the start of this section
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{file_err, Error, Result};

pub const MAGIC: &[u8; 8] = b"SPKTCKP1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub tensors: Vec<TensorEntry>,
}

pub fn encode(tensors: &[(String, &Tensor)]) -> Result<Vec<u8>> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut data = Vec::new();
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: data.len() as u64,
        });
        for &v in t.data() {
            data.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&Header { tensors: entries })?;
    let mut out = Vec::with_capacity(16 + header.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing SPKTCKP1 magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..).ok_or_else(|| bad("truncated"))?;
    let header: Header = serde_json::from_slice(body.get(..hlen).ok_or_else(|| bad("truncated header"))?)?;
    let data = &body[hlen..];
    header
        .tensors
        .into_iter()
        .map(|e| {
            let numel: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let raw = data
                .get(start..start + 4 * numel)
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{}` runs past end of file", e.name)))?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect();
            Ok((e.name, Tensor::new(e.shape, values)?))
        })
        .collect()
}

pub fn save_store(store: &ParamStore, path: &Path) -> Result<()> {
    let tensors: Vec<(String, &Tensor)> = store.iter().map(|(_, p)| (p.name.clone(), &p.value)).collect();
    let bytes = encode(&tensors)?;
    let mut f = std::fs::File::create(path).map_err(file_err(path))?;
    f.write_all(&bytes).map_err(file_err(path))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(file_err(path))?;
    decode(&bytes)
}

/// Overwrites every parameter of `store` from the file. Names and shapes must
/// match exactly; extra tensors in the file are an error.
pub fn load_into(store: &mut ParamStore, path: &Path) -> Result<()> {
    let tensors = read(path)?;
    if tensors.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "{} holds {} tensors, model expects {}",
            path.display(),
            tensors.len(),
            store.len()
        )));
    }
    for (name, t) in tensors {
        let id = store
            .id(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor `{name}`")))?;
        if store.value(id).shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, model expects {:?}",
                t.shape(),
                store.value(id).shape()
            )));
        }
        store.set_values(id, t.data())?;
    }
    Ok(())
}
