//! Checkpoint directories: `manifest.json` lists every tensor's name, shape
//! and byte range inside `params.bin`, which holds little-endian `f64`
//! values back to back in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Params, Shape, Tensor};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const PAYLOAD: &str = "params.bin";
const FORMAT: &str = "polypseg-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub shape: Shape,
    /// Byte offset into the payload.
    pub offset: u64,
    /// Length in bytes.
    pub bytes: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub entries: Vec<Entry>,
    /// Free-form metadata (model configuration, step count, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Overwrites every parameter of `model` with the stored value of the
    /// same name and shape. Missing or mis-shaped entries are errors.
    pub fn restore_into(&self, model: &mut dyn Params) -> Result<()> {
        let mut err = None;
        model.visit_mut("", &mut |name, t| {
            if err.is_some() {
                return;
            }
            match self.get(name) {
                Some(stored) if stored.shape() == t.shape() => *t = stored.to_parameter(),
                Some(stored) => {
                    err = Some(Error::shape(
                        "checkpoint",
                        format!("{name}: stored {} vs model {}", stored.shape(), t.shape()),
                    ))
                }
                None => err = Some(Error::Invalid(format!("checkpoint lacks parameter {name}"))),
            }
        });
        err.map_or(Ok(()), Err)
    }
}

pub fn save(dir: &Path, tensors: &[(String, Tensor)], meta: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        let offset = payload.len() as u64;
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(Entry {
            name: name.clone(),
            shape: t.shape(),
            offset,
            bytes: payload.len() as u64 - offset,
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        entries,
        meta,
    };
    let bin = dir.join(PAYLOAD);
    fs::write(&bin, &payload).map_err(|e| Error::io(&bin, e))?;
    let man = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&man, text + "\n").map_err(|e| Error::io(&man, e))?;
    Ok(())
}

pub fn save_params(dir: &Path, model: &dyn Params, meta: serde_json::Value) -> Result<()> {
    let mut named = Vec::new();
    model.visit("", &mut |n, t| named.push((n.to_string(), t.clone())));
    save(dir, &named, meta)
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let man = dir.join(MANIFEST);
    let text = fs::read_to_string(&man).map_err(|e| Error::io(&man, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT {
        return Err(Error::Invalid(format!("unsupported checkpoint format {:?}", manifest.format)));
    }
    let bin = dir.join(PAYLOAD);
    let payload = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let mut tensors = Vec::with_capacity(manifest.entries.len());
    for e in manifest.entries {
        let (start, len) = (e.offset as usize, e.bytes as usize);
        if len != e.shape.numel() * 8 || start + len > payload.len() {
            return Err(Error::Invalid(format!("checkpoint entry {} has a bad byte range", e.name)));
        }
        let data = payload[start..start + len]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push((e.name, Tensor::new(e.shape, data)?));
    }
    Ok(Checkpoint {
        tensors,
        meta: manifest.meta,
    })
}
