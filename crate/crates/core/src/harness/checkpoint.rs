//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then every parameter tensor as little-endian `f64` in header order.
//! See `docs/formats.md`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::model::{InputDims, Model};
use super::run::{Checkpoint, CODE_VERSION};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GMATCHCK";
pub const FORMAT_VERSION: u32 = 1;
const PREFIX: usize = 8 + 4 + 8;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    code_version: String,
    config: ExperimentConfig,
    node_dim: usize,
    edge_dim: usize,
    step: u64,
    epochs_completed: usize,
    rng_state: u64,
    tensors: Vec<TensorEntry>,
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let params = ck.model.params();
    let header = Header {
        code_version: CODE_VERSION.into(),
        config: ck.config.clone(),
        node_dim: ck.dims.node,
        edge_dim: ck.dims.edge,
        step: ck.step,
        epochs_completed: ck.epochs_completed,
        rng_state: ck.rng_state,
        tensors: params
            .iter()
            .map(|(_, p)| TensorEntry {
                name: p.name().into(),
                shape: p.value().shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(PREFIX + json.len() + 8 * params.num_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in params.iter() {
        for v in p.value().data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < PREFIX {
        return Err(Error::Checkpoint(format!("truncated: {} bytes, header needs {PREFIX}", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let body = &bytes[PREFIX..];
    if header_len > body.len() as u64 {
        return Err(Error::Checkpoint(format!(
            "truncated: header declares {header_len} bytes, {} remain",
            body.len()
        )));
    }
    let (json, mut data) = body.split_at(header_len as usize);
    let header: Header = serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    header.config.validate()?;

    let dims = InputDims {
        node: header.node_dim,
        edge: header.edge_dim,
    };
    // Values are overwritten below; the rng only fixes the layout.
    let mut model = Model::build(&header.config, dims, &mut ChaCha8Rng::seed_from_u64(0))?;
    let expected: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if data.len() != 8 * expected {
        return Err(Error::Checkpoint(format!(
            "truncated or padded: {} data bytes, header declares {}",
            data.len(),
            8 * expected
        )));
    }
    if let Some(store) = model.params_mut() {
        if store.len() != header.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "model has {} tensors, file has {}",
                store.len(),
                header.tensors.len()
            )));
        }
        let ids: Vec<_> = store.ids().collect();
        for (id, entry) in ids.into_iter().zip(&header.tensors) {
            let p = store.get_mut(id);
            if p.name() != entry.name || p.value().shape() != entry.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match model tensor {} {:?}",
                    entry.name,
                    entry.shape,
                    p.name(),
                    p.value().shape()
                )));
            }
            for v in p.value_mut().data_mut() {
                let (head, rest) = data.split_at(8);
                *v = f64::from_le_bytes(head.try_into().expect("8 bytes"));
                data = rest;
            }
        }
    } else if !header.tensors.is_empty() {
        return Err(Error::Checkpoint("unlearned baseline checkpoint carries tensors".into()));
    }
    Ok(Checkpoint {
        config: header.config,
        dims,
        model,
        step: header.step,
        epochs_completed: header.epochs_completed,
        rng_state: header.rng_state,
    })
}

/// Writes to a sibling temporary file and renames, so a crash never leaves
/// a half-written checkpoint at `path`.
pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(ck)?;
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}

/// Loads and checks that the checkpoint fits `config`'s architecture.
pub fn load_checkpoint_for(path: impl AsRef<Path>, config: &ExperimentConfig) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if ck.config.method != config.method {
        return Err(Error::Config(format!(
            "checkpoint holds a {} model, config asks for {}",
            ck.config.method, config.method
        )));
    }
    if let Some(w) = ck.model.hidden_width() {
        if w != config.hidden_width {
            return Err(Error::HiddenWidthMismatch {
                checkpoint: w,
                config: config.hidden_width,
            });
        }
    }
    Ok(ck)
}
