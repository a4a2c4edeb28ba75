//! Binary checkpoint container.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic      8 bytes  "ESIQACKP"
//! version    u32      1
//! text_len   u32      byte length of the config text
//! text       UTF-8    `key = value` lines (model config, then `meta.*` keys)
//! n_tensors  u32
//! per tensor:
//!   name_len u32, name UTF-8
//!   ndim     u32, extents u64 × ndim
//!   values   f64 × product(extents)
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::config::{parse_key_values, ModelConfig};
use super::net::Esiqanet;
use super::ModelError;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ESIQACKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointTensor {
    pub name: String,
    pub extents: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Free-form provenance such as the seed; stored as `meta.<key>` lines.
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<CheckpointTensor>,
}

impl Checkpoint {
    pub fn from_model(model: &Esiqanet, metadata: BTreeMap<String, String>) -> Self {
        let tensors = model
            .params()
            .entries()
            .iter()
            .map(|e| CheckpointTensor {
                name: e.name.clone(),
                extents: e.value.extents().to_vec(),
                values: e.value.data().to_vec(),
            })
            .collect();
        Self { config: model.config().clone(), metadata, tensors }
    }

    /// Rebuilds the model; every parameter must be present with matching extents.
    pub fn into_model(self) -> Result<Esiqanet, ModelError> {
        let mut model = Esiqanet::new(self.config, 0)?;
        let mut by_name: BTreeMap<String, CheckpointTensor> =
            self.tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
        let ids: Vec<_> = model.params().ids().collect();
        for id in ids {
            let entry = model.params().entry(id);
            let t = by_name
                .remove(&entry.name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor `{}`", entry.name)))?;
            if t.extents != entry.value.extents() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor `{}` has extents {:?}, model expects {:?}",
                    t.name,
                    t.extents,
                    entry.value.extents()
                )));
            }
            model.params_mut().set_data(id, t.values);
        }
        if let Some(name) = by_name.keys().next() {
            return Err(ModelError::Checkpoint(format!("unexpected tensor `{name}`")));
        }
        Ok(model)
    }

    fn text(&self) -> String {
        let mut s = self.config.to_text();
        for (k, v) in &self.metadata {
            s.push_str(&format!("meta.{k} = {v}\n"));
        }
        s
    }
}

fn write_u32<W: Write>(w: &mut W, n: usize, what: &str) -> Result<(), ModelError> {
    let n = u32::try_from(n).map_err(|_| ModelError::Checkpoint(format!("{what} too large")))?;
    Ok(w.write_u32::<LittleEndian>(n)?)
}

pub fn write_checkpoint<W: Write>(w: &mut W, ckpt: &Checkpoint) -> Result<(), ModelError> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    let text = ckpt.text();
    write_u32(w, text.len(), "config text")?;
    w.write_all(text.as_bytes())?;
    write_u32(w, ckpt.tensors.len(), "tensor count")?;
    for t in &ckpt.tensors {
        if t.extents.iter().product::<usize>() != t.values.len() {
            return Err(ModelError::Checkpoint(format!("tensor `{}` size disagrees with extents", t.name)));
        }
        write_u32(w, t.name.len(), "tensor name")?;
        w.write_all(t.name.as_bytes())?;
        write_u32(w, t.extents.len(), "rank")?;
        for &e in &t.extents {
            w.write_u64::<LittleEndian>(e as u64)?;
        }
        for &v in &t.values {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

fn read_string<R: Read>(r: &mut R, len: usize, what: &str) -> Result<String, ModelError> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| ModelError::Checkpoint(format!("{what} is not UTF-8")))
}

// guards allocation against corrupt length fields
const MAX_ELEMENTS: u64 = 1 << 32;

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint, ModelError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let text_len = r.read_u32::<LittleEndian>()? as usize;
    let text = read_string(r, text_len, "config text")?;
    let map = parse_key_values(&text)?;
    let config = ModelConfig::from_map(&map)?;
    let metadata =
        map.iter().filter_map(|(k, v)| k.strip_prefix("meta.").map(|k| (k.to_string(), v.clone()))).collect();
    let n = r.read_u32::<LittleEndian>()?;
    let mut tensors = Vec::new();
    for _ in 0..n {
        let name_len = r.read_u32::<LittleEndian>()? as usize;
        let name = read_string(r, name_len, "tensor name")?;
        let ndim = r.read_u32::<LittleEndian>()?;
        let mut extents = Vec::with_capacity(ndim.min(8) as usize);
        let mut count: u64 = 1;
        for _ in 0..ndim {
            let e = r.read_u64::<LittleEndian>()?;
            count = count.saturating_mul(e);
            extents.push(e as usize);
        }
        if count > MAX_ELEMENTS {
            return Err(ModelError::Checkpoint(format!("tensor `{name}` implausibly large")));
        }
        let mut values = vec![0.0; count as usize];
        r.read_f64_into::<LittleEndian>(&mut values)?;
        tensors.push(CheckpointTensor { name, extents, values });
    }
    Ok(Checkpoint { config, metadata, tensors })
}

pub fn save_checkpoint(path: &Path, model: &Esiqanet, metadata: BTreeMap<String, String>) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, &Checkpoint::from_model(model, metadata))?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

/// Parameter tensors as plain tensors, keyed by name.
pub fn tensor_map(ckpt: &Checkpoint) -> Result<BTreeMap<String, Tensor>, ModelError> {
    ckpt.tensors.iter().map(|t| Ok((t.name.clone(), Tensor::new(t.values.clone(), &t.extents)?))).collect()
}
