//! Versioned checkpoint files.
//!
//! Layout: a magic line, one line of JSON holding the model configuration,
//! the tensor manifest and free-form provenance, then every tensor's values
//! as little-endian `f64` in manifest order.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use phenocast_tensor::Tensor;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

pub const MAGIC: &str = "phenocast-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    payload_len: usize,
    provenance: BTreeMap<String, String>,
}

fn ckpt_err(message: impl Into<String>) -> Error {
    Error::Checkpoint {
        message: message.into(),
        tensors: Vec::new(),
    }
}

pub fn write_checkpoint<W: Write>(mut out: W, model: &Model, provenance: &BTreeMap<String, String>) -> Result<()> {
    let header = Header {
        version: VERSION,
        config: model.cfg,
        tensors: model
            .params
            .manifest()
            .into_iter()
            .map(|(name, shape)| TensorEntry { name, shape })
            .collect(),
        payload_len: model.params.scalar_count(),
        provenance: provenance.clone(),
    };
    let json = serde_json::to_string(&header).map_err(|e| ckpt_err(e.to_string()))?;
    writeln!(out, "{MAGIC} v{VERSION}")?;
    writeln!(out, "{json}")?;
    let mut payload = Vec::with_capacity(header.payload_len * 8);
    for t in model.params.tensors() {
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&payload)?;
    Ok(())
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model, provenance: &BTreeMap<String, String>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, model, provenance)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Reads a checkpoint completely before building the model, so a damaged
/// file never yields a partially loaded one.
pub fn read_checkpoint<R: Read>(input: R) -> Result<(Model, BTreeMap<String, String>)> {
    let mut reader = BufReader::new(input);
    let mut magic = String::new();
    reader.read_line(&mut magic)?;
    let expected = format!("{MAGIC} v{VERSION}");
    if magic.trim_end() != expected {
        return Err(ckpt_err(format!(
            "unrecognised checkpoint tag {:?}, expected {expected:?}",
            magic.trim_end()
        )));
    }
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: Header = serde_json::from_str(line.trim_end()).map_err(|e| ckpt_err(format!("bad header: {e}")))?;
    if header.version != VERSION {
        return Err(ckpt_err(format!("unsupported checkpoint version {}", header.version)));
    }
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    if payload.len() != header.payload_len * 8 {
        return Err(ckpt_err(format!(
            "payload holds {} bytes, header declares {} values ({} bytes); file truncated or corrupt",
            payload.len(),
            header.payload_len,
            header.payload_len * 8
        )));
    }

    let mut model = Model::new(header.config, 0)?;
    let stored: Vec<(String, Vec<usize>)> = header.tensors.iter().map(|e| (e.name.clone(), e.shape.clone())).collect();
    let mut values = payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")));
    let mut loaded = crate::params::ParamStore::new();
    for (name, shape) in &stored {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(n).collect();
        let t = Tensor::new(shape.clone(), data).map_err(|e| Error::Checkpoint {
            message: e.to_string(),
            tensors: vec![name.clone()],
        })?;
        loaded.add(name.clone(), t);
    }
    if values.next().is_some() {
        return Err(ckpt_err("payload longer than the tensor manifest"));
    }
    model.params.load_values(&loaded)?;
    Ok((model, header.provenance))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, BTreeMap<String, String>)> {
    read_checkpoint(std::fs::File::open(path)?)
}
