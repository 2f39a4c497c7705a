//! Checkpoint files.
//!
//! Layout: one line of JSON (the [`CheckpointHeader`]) terminated by `\n`,
//! followed by every parameter tensor in [`PARAM_NAMES`] order as raw
//! little-endian `f64`, row-major, with no padding between blocks.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelDims, ModelParams, N_PARAMS, PARAM_NAMES};
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "ivr-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const INIT_SCHEME: &str = "uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub dims: ModelDims,
    pub tau: f64,
    pub vocab_hash: String,
    pub init: String,
    /// Free-form echo of the configuration that produced the weights.
    pub config: serde_json::Value,
    pub params: Vec<ParamEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParams,
}

impl Checkpoint {
    /// Fails with a compatibility error unless the checkpoint was trained on
    /// `vocab` with input width `feat_dim`.
    pub fn check_compatible(&self, vocab: &Vocab, feat_dim: usize) -> Result<()> {
        let expected = vocab_hash(vocab);
        if self.header.vocab_hash != expected {
            return Err(Error::Compatibility(format!(
                "vocabulary hash {} does not match dataset vocabulary hash {expected}",
                self.header.vocab_hash
            )));
        }
        let d = &self.header.dims;
        if d.n_attrs != vocab.attrs.len() || d.n_objs != vocab.objs.len() {
            return Err(Error::Compatibility(format!(
                "checkpoint has {} attrs x {} objs, dataset has {} x {}",
                d.n_attrs,
                d.n_objs,
                vocab.attrs.len(),
                vocab.objs.len()
            )));
        }
        if d.feat_dim != feat_dim {
            return Err(Error::Compatibility(format!(
                "checkpoint expects feature width {}, dataset has {feat_dim}",
                d.feat_dim
            )));
        }
        Ok(())
    }
}

/// SHA-256 (hex) over attribute names then object names, each
/// NUL-terminated, with a separator byte between the two lists.
pub fn vocab_hash(vocab: &Vocab) -> String {
    let mut h = Sha256::new();
    for a in &vocab.attrs {
        h.update(a.as_bytes());
        h.update([0u8]);
    }
    h.update([0xFFu8]);
    for o in &vocab.objs {
        h.update(o.as_bytes());
        h.update([0u8]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_checkpoint(
    params: &ModelParams,
    vocab: &Vocab,
    config: &serde_json::Value,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        dims: params.dims,
        tau: params.tau,
        vocab_hash: vocab_hash(vocab),
        init: INIT_SCHEME.into(),
        config: config.clone(),
        params: PARAM_NAMES
            .iter()
            .zip(params.tensors())
            .map(|(name, t)| ParamEntry {
                name: (*name).into(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect(),
    };
    let mut bytes = serde_json::to_vec(&header).expect("header serializes");
    bytes.push(b'\n');
    for t in params.tensors() {
        for &x in t.as_slice() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(path, "missing JSON header line"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            format!(
                "unsupported checkpoint {} v{}",
                header.format, header.version
            ),
        ));
    }
    if header.params.len() != N_PARAMS
        || header
            .params
            .iter()
            .zip(PARAM_NAMES)
            .any(|(e, name)| e.name != name)
    {
        return Err(Error::Compatibility(
            "parameter list differs from this model's layout".into(),
        ));
    }

    let mut body = &bytes[nl + 1..];
    let expected: usize = header.params.iter().map(|e| e.rows * e.cols * 8).sum();
    if body.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "expected {expected} bytes of parameters, found {}",
                body.len()
            ),
        ));
    }
    let mut tensors = Vec::with_capacity(N_PARAMS);
    for e in &header.params {
        let n = e.rows * e.cols;
        let data = body[..n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        body = &body[n * 8..];
        tensors.push(Tensor::from_vec(e.rows, e.cols, data)?);
    }
    let params = ModelParams::from_tensors(header.dims, header.tau, tensors)
        .map_err(|e| Error::Compatibility(e.to_string()))?;
    Ok(Checkpoint { header, params })
}
