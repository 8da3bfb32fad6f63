//! Versioned binary checkpoints.
//!
//! Layout (little endian): magic `QRFCKPT\0`, `u32` version, `u32` length
//! plus JSON model config (kind, d, encoders), `u32` tensor count, then a
//! manifest of `(name, rows, cols)` and finally the tensor data as `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::policy::PolicyModel;
use super::tape::{Group, ParamStore};
use super::ModelConfig;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"QRFCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(model: &PolicyModel, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    let cfg = serde_json::to_vec(model.config())?;
    w.write_u32::<LittleEndian>(cfg.len() as u32)?;
    w.write_all(&cfg)?;
    let p = &model.params;
    w.write_u32::<LittleEndian>(p.len() as u32)?;
    for id in p.ids() {
        let name = p.name(id).as_bytes();
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name)?;
        let (r, c) = p.get(id).shape();
        w.write_u32::<LittleEndian>(r as u32)?;
        w.write_u32::<LittleEndian>(c as u32)?;
    }
    for id in p.ids() {
        for x in p.value(id).iter() {
            w.write_f64::<LittleEndian>(*x)?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(model: &PolicyModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Rebuilds the model described in the header and fills it with the stored
/// tensors; any name or shape disagreement is a format error.
pub fn read_checkpoint(r: &mut impl Read, table: Arc<EmbeddingTable>) -> Result<PolicyModel> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| Error::Format("truncated checkpoint".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut cfg = vec![0u8; len];
    r.read_exact(&mut cfg)?;
    let config: ModelConfig = serde_json::from_slice(&cfg)?;
    let mut model = PolicyModel::new(config, table, 0)?;
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.read_u32::<LittleEndian>()? as usize;
        let mut name = vec![0u8; n];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rows = r.read_u32::<LittleEndian>()? as usize;
        let cols = r.read_u32::<LittleEndian>()? as usize;
        let expected = model.params.find(&name).map(|id| model.params.get(id).shape());
        if expected != Some((rows, cols)) {
            return Err(Error::Format(format!("tensor {name} {rows}x{cols} does not fit the model ({expected:?})")));
        }
        manifest.push((name, rows, cols));
    }
    let mut stored = ParamStore::new();
    for (name, rows, cols) in manifest {
        let mut data = vec![0.0; rows * cols];
        r.read_f64_into::<LittleEndian>(&mut data)
            .map_err(|_| Error::Format(format!("truncated data for tensor {name}")))?;
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("tensor {name}")));
        }
        if stored.find(&name).is_some() {
            return Err(Error::Format(format!("duplicate tensor {name}")));
        }
        let group = model.params.find(&name).map_or(Group::Policy, |id| model.params.group(id));
        stored.add(&name, group, Array2::from_shape_vec((rows, cols), data).expect("sized"));
    }
    model.load_values(&stored)?;
    Ok(model)
}

pub fn load_checkpoint(path: impl AsRef<Path>, table: Arc<EmbeddingTable>) -> Result<PolicyModel> {
    read_checkpoint(&mut BufReader::new(File::open(path)?), table)
}
