//! Model checkpoints.
//!
//! Layout: magic `SCK1`, an unsigned 32-bit little-endian manifest length,
//! a UTF-8 JSON manifest, then every parameter's values in manifest order as
//! little-endian floats of the recorded width, row-major. The manifest
//! carries the full model configuration, the init seed, pruning masks, and
//! the data-pipeline settings (sensors, scaler, split fractions), so a
//! checkpoint plus the original STF1 file reproduces evaluation exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use shred_core::model::ShredModel;

use crate::config::{ModelJson, NormalizeMode};
use crate::{LabError, Result, Scalar};

pub const MAGIC: [u8; 4] = *b"SCK1";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to rebuild the preprocessing that fed the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineInfo {
    pub dataset_name: String,
    /// SHA-256 of the STF1 bytes the run trained on.
    pub dataset_checksum: String,
    pub normalize: NormalizeMode,
    pub fractions: [f64; 3],
    pub scaler_min: f32,
    pub scaler_max: f32,
    pub sensors: Vec<usize>,
    pub target_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: u32,
    pub dtype: String,
    pub init_seed: u64,
    pub model: ModelJson,
    pub params: Vec<ParamEntry>,
    /// Pruning mask per latent system, row-major over each Ξ.
    pub masks: Vec<Vec<bool>>,
    pub pipeline: PipelineInfo,
}

pub fn encode_checkpoint<T: Scalar>(model: &ShredModel<T>, pipeline: &PipelineInfo) -> Vec<u8> {
    let params: Vec<ParamEntry> = model
        .params
        .iter()
        .map(|(name, value, _)| ParamEntry {
            name: name.to_string(),
            rows: value.rows(),
            cols: value.cols(),
        })
        .collect();
    let manifest = CheckpointManifest {
        format: FORMAT_VERSION,
        dtype: T::DTYPE.to_string(),
        init_seed: model.params.init_seed(),
        model: ModelJson::from_core(&model.cfg),
        params,
        masks: model.systems.iter().map(|s| s.mask.clone()).collect(),
        pipeline: pipeline.clone(),
    };
    let manifest_bytes = serde_json::to_vec(&manifest).expect("manifest is plain data");

    let mut out =
        Vec::with_capacity(8 + manifest_bytes.len() + model.params.n_scalars() * T::BYTES);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(manifest_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest_bytes);
    for (_, value, _) in model.params.iter() {
        for &v in value.data() {
            v.write_le(&mut out);
        }
    }
    out
}

/// Parse just the manifest, returning it with the payload offset.
pub fn read_manifest(bytes: &[u8]) -> Result<(CheckpointManifest, usize)> {
    if bytes.len() < 8 || bytes[0..4] != MAGIC {
        return Err(LabError::Usage("not a checkpoint file (bad magic)".into()));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + len {
        return Err(LabError::Usage("checkpoint truncated in manifest".into()));
    }
    let manifest: CheckpointManifest = serde_json::from_slice(&bytes[8..8 + len])
        .map_err(LabError::json("checkpoint manifest"))?;
    if manifest.format != FORMAT_VERSION {
        return Err(LabError::Usage(format!(
            "unsupported checkpoint format {}",
            manifest.format
        )));
    }
    Ok((manifest, 8 + len))
}

/// Rebuild a model of width `T` from checkpoint bytes. The recorded dtype
/// must match `T`; use [`read_manifest`] first to dispatch.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<(ShredModel<T>, CheckpointManifest)> {
    let (manifest, payload_start) = read_manifest(bytes)?;
    if manifest.dtype != T::DTYPE {
        return Err(LabError::Usage(format!(
            "checkpoint stores {} values, attempted to load as {}",
            manifest.dtype,
            T::DTYPE
        )));
    }
    let cfg = manifest.model.to_core()?;
    let mut model = ShredModel::<T>::new(cfg, manifest.init_seed)?;

    let n_scalars: usize = manifest.params.iter().map(|p| p.rows * p.cols).sum();
    let expected = n_scalars * T::BYTES;
    let payload = &bytes[payload_start..];
    if payload.len() != expected {
        return Err(LabError::Usage(format!(
            "checkpoint payload is {} bytes, manifest implies {expected}",
            payload.len()
        )));
    }

    let mut off = 0usize;
    for entry in &manifest.params {
        let id = model.params.id(&entry.name)?;
        let value = model.params.value_mut(id);
        if value.shape() != (entry.rows, entry.cols) {
            return Err(LabError::Usage(format!(
                "checkpoint param {:?} has shape {}x{}, model expects {}x{}",
                entry.name,
                entry.rows,
                entry.cols,
                value.shape().0,
                value.shape().1
            )));
        }
        for v in value.data_mut() {
            *v = T::read_le(&payload[off..off + T::BYTES]);
            off += T::BYTES;
        }
    }
    model.restore_masks(&manifest.masks)?;
    Ok((model, manifest))
}

pub fn save_checkpoint<T: Scalar>(
    model: &ShredModel<T>,
    pipeline: &PipelineInfo,
    path: &Path,
) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model, pipeline))
        .map_err(LabError::io(format!("writing {}", path.display())))
}

/// A checkpoint of either width, for commands that dispatch at runtime.
pub enum AnyModel {
    F32(ShredModel<f32>),
    F64(ShredModel<f64>),
}

pub fn load_any(path: &Path) -> Result<(AnyModel, CheckpointManifest)> {
    let bytes = std::fs::read(path).map_err(LabError::io(format!("reading {}", path.display())))?;
    let (manifest, _) = read_manifest(&bytes)?;
    match manifest.dtype.as_str() {
        "f32" => decode_checkpoint::<f32>(&bytes).map(|(m, man)| (AnyModel::F32(m), man)),
        "f64" => decode_checkpoint::<f64>(&bytes).map(|(m, man)| (AnyModel::F64(m), man)),
        other => Err(LabError::Usage(format!(
            "checkpoint has unknown dtype {other:?}"
        ))),
    }
}
