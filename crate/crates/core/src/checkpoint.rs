//! Binary checkpoint format.
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"SQDFCKPT"
//! 8       4     format version, u32 little-endian (currently 1)
//! 12      8     header length H, u64 little-endian
//! 20      H     header, UTF-8 JSON (see CheckpointHeader)
//! 20+H    P     payload: every tensor's values, little-endian, in index order
//! 20+H+P  32    SHA-256 of bytes [0, 20+H+P)
//! ```
//!
//! Values are stored at the model precision (4 bytes for f32, 8 for f64), so
//! a save/load round trip is bit-exact. Tensor offsets in the header are
//! relative to the start of the payload.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::dataset::ScalerState;
use crate::denoiser::{DenoiserConfig, DenoiserModel};
use crate::error::{Error, Result};
use crate::nn::Precision;
use crate::rng;
use crate::schedule::ScheduleSpec;

pub const MAGIC: &[u8; 8] = b"SQDFCKPT";
pub const FORMAT_VERSION: u32 = 1;
const PREFIX_LEN: usize = 20;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
    /// Byte length.
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    /// Resolved denoiser architecture (sequence length, features and steps filled in).
    pub denoiser: DenoiserConfig,
    pub schedule: ScheduleSpec,
    /// Maps samples from model space back to original units.
    pub scaler: Option<ScalerState>,
    pub columns: Vec<String>,
    /// Epochs completed when the checkpoint was written.
    pub epoch: usize,
    pub seed: u64,
    pub precision: Precision,
    /// The run configuration as given, if the checkpoint came from a run.
    pub run_config: Option<RunConfig>,
    pub tensors: Vec<TensorEntry>,
}

/// Everything a checkpoint holds except the built model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub values: Vec<(String, Vec<usize>, Vec<f64>)>,
}

/// Fields of the header that are not derived from the model itself.
#[derive(Debug, Clone, Default)]
pub struct CheckpointMeta {
    pub schedule: ScheduleSpec,
    pub scaler: Option<ScalerState>,
    pub columns: Vec<String>,
    pub epoch: usize,
    pub seed: u64,
    pub run_config: Option<RunConfig>,
}

fn width(precision: Precision) -> usize {
    match precision {
        Precision::F32 => 4,
        Precision::F64 => 8,
    }
}

fn push_values(out: &mut Vec<u8>, values: &[f64], precision: Precision) {
    for &v in values {
        match precision {
            Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

fn read_values(bytes: &[u8], precision: Precision) -> Vec<f64> {
    match precision {
        Precision::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect(),
        Precision::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
    }
}

/// Serializes a model and its metadata.
pub fn encode(model: &DenoiserModel, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let precision = model.config().precision;
    let w = width(precision);
    let exported = model.params().export()?;
    let mut payload = Vec::with_capacity(exported.iter().map(|(_, _, v)| v.len() * w).sum());
    let mut tensors = Vec::with_capacity(exported.len());
    for (name, shape, values) in &exported {
        let offset = payload.len();
        push_values(&mut payload, values, precision);
        tensors.push(TensorEntry { name: name.clone(), shape: shape.clone(), offset, len: values.len() * w });
    }
    let header = CheckpointHeader {
        denoiser: model.config().clone(),
        schedule: meta.schedule.clone(),
        scaler: meta.scaler.clone(),
        columns: meta.columns.clone(),
        epoch: meta.epoch,
        seed: meta.seed,
        precision,
        run_config: meta.run_config.clone(),
        tensors,
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + payload.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Parses and verifies checkpoint bytes. Never builds a model, so it is safe
/// on untrusted input.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < PREFIX_LEN + DIGEST_LEN {
        return Err(corrupt(format!("{} bytes is too short for a checkpoint", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic; not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format version {version}")));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch; file is truncated or corrupted"));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|h| h.checked_add(PREFIX_LEN))
        .filter(|&end| end <= body.len())
        .ok_or_else(|| corrupt(format!("header length {header_len} exceeds the file")))?;
    let header: CheckpointHeader = serde_json::from_slice(&body[PREFIX_LEN..header_end])
        .map_err(|e| corrupt(format!("header: {e}")))?;
    let payload = &body[header_end..];
    let w = width(header.precision);
    let mut expected_offset = 0usize;
    let mut values = Vec::with_capacity(header.tensors.len().min(payload.len()));
    for t in &header.tensors {
        let count = t
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|c| c.checked_mul(w))
            .ok_or_else(|| corrupt(format!("tensor `{}` shape overflows", t.name)))?;
        if count != t.len || t.offset != expected_offset {
            return Err(corrupt(format!("tensor `{}` index entry is inconsistent", t.name)));
        }
        let end = t.offset.checked_add(t.len).filter(|&e| e <= payload.len()).ok_or_else(|| {
            corrupt(format!("tensor `{}` runs past the payload", t.name))
        })?;
        values.push((t.name.clone(), t.shape.clone(), read_values(&payload[t.offset..end], header.precision)));
        expected_offset = end;
    }
    if expected_offset != payload.len() {
        return Err(corrupt(format!("{} trailing payload bytes", payload.len() - expected_offset)));
    }
    if let Some(scaler) = &header.scaler {
        scaler.validate().map_err(|e| corrupt(e.to_string()))?;
    }
    if header.denoiser.precision != header.precision {
        return Err(corrupt("header precision disagrees with the denoiser config"));
    }
    Ok(Checkpoint { header, values })
}

impl Checkpoint {
    /// Rebuilds the model and loads the stored parameters.
    pub fn into_model(&self) -> Result<DenoiserModel> {
        let cfg = &self.header.denoiser;
        cfg.validate()?;
        let stored: usize = self.values.iter().map(|(_, _, v)| v.len()).sum();
        if cfg.expected_num_params() != Some(stored) {
            return Err(corrupt(format!(
                "checkpoint stores {stored} parameters but its config implies {:?}",
                cfg.expected_num_params()
            )));
        }
        // Init values are overwritten; the generator only has to be valid.
        let model = DenoiserModel::init(cfg, &mut rng::seeded(0))?;
        model.params().import(&self.values).map_err(|e| corrupt(format!("parameters: {e}")))?;
        Ok(model)
    }
}

pub fn save(path: &Path, model: &DenoiserModel, meta: &CheckpointMeta) -> Result<()> {
    let bytes = encode(model, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(DenoiserModel, CheckpointHeader)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt = decode(&bytes)?;
    let model = ckpt.into_model()?;
    Ok((model, ckpt.header))
}

/// Hex SHA-256 over parameter names, shapes and bit patterns at model precision.
pub fn model_digest(model: &DenoiserModel) -> Result<String> {
    let precision = model.config().precision;
    let mut hasher = Sha256::new();
    for (name, shape, values) in model.params().export()? {
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        hasher.update((shape.len() as u64).to_le_bytes());
        for d in shape {
            hasher.update((d as u64).to_le_bytes());
        }
        let mut buf = Vec::with_capacity(values.len() * 8);
        push_values(&mut buf, &values, precision);
        hasher.update(&buf);
    }
    Ok(hex::encode(hasher.finalize()))
}
