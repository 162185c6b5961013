//! Checkpoint format: a JSON manifest (`*.json`) and a little-endian `f32`
//! payload (`*.bin`) holding every tensor back to back in manifest order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{parameter_schema, ParameterSet, UNetConfig};
use crate::dataset::NormalizationStats;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::util::{f32s_to_le_bytes, le_bytes_to_f32s, read_bytes, write_atomic};

pub const CHECKPOINT_FORMAT: &str = "dumpwatch-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained weights plus everything needed to run them on new rasters.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: UNetConfig,
    pub parameters: ParameterSet<f32>,
    pub normalization: NormalizationStats,
    /// Positive-class weight the model was trained with.
    pub pos_weight: f64,
    /// Free-form training record (epochs, seeds, ...).
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn band_names(&self) -> &[String] {
        &self.normalization.band_names
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    format_version: u32,
    config: UNetConfig,
    tensors: Vec<TensorEntry>,
    normalization: NormalizationStats,
    pos_weight: f64,
    payload: String,
    payload_bytes: u64,
    #[serde(default)]
    metadata: serde_json::Value,
}

fn payload_path(path: &Path) -> PathBuf {
    path.with_extension("bin")
}

/// Writes `path` (manifest) and `path.with_extension("bin")` (weights).
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    ckpt.parameters.check_schema(&ckpt.config)?;
    ckpt.normalization.validate()?;
    if ckpt.normalization.band_names.len() != ckpt.config.in_channels {
        return Err(Error::SchemaMismatch(format!(
            "{} normalization bands for a {}-channel model",
            ckpt.normalization.band_names.len(),
            ckpt.config.in_channels
        )));
    }
    let mut flat = Vec::with_capacity(ckpt.parameters.scalar_count());
    for t in ckpt.parameters.tensors() {
        flat.extend_from_slice(&t.values);
    }
    let bytes = f32s_to_le_bytes(&flat);
    let bin = payload_path(path);
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        format_version: CHECKPOINT_VERSION,
        config: ckpt.config,
        tensors: ckpt
            .parameters
            .names()
            .iter()
            .zip(ckpt.parameters.tensors())
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
        normalization: ckpt.normalization.clone(),
        pos_weight: ckpt.pos_weight,
        payload: bin
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        payload_bytes: bytes.len() as u64,
        metadata: ckpt.metadata.clone(),
    };
    write_atomic(&bin, &bytes)?;
    let text = serde_json::to_string_pretty(&manifest)?;
    write_atomic(path, text.as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = read_bytes(path)?;
    let value: serde_json::Value = serde_json::from_slice(&text)?;
    match value.get("format_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == CHECKPOINT_VERSION as u64 => {}
        Some(v) => return Err(Error::UnsupportedVersion(v.min(u32::MAX as u64) as u32)),
        None => return Err(Error::SchemaMismatch("manifest has no format_version".into())),
    }
    let m: Manifest = serde_json::from_value(value)?;
    if m.format != CHECKPOINT_FORMAT {
        return Err(Error::SchemaMismatch(format!("unexpected format {:?}", m.format)));
    }
    m.config.validate()?;
    let schema = parameter_schema(&m.config);
    let listed = m.tensors.iter().map(|t| (&t.name, &t.shape));
    if schema.len() != m.tensors.len() || schema.iter().map(|s| (&s.0, &s.1)).ne(listed) {
        return Err(Error::SchemaMismatch(
            "tensor list does not match the model config".into(),
        ));
    }
    let bytes = read_bytes(&payload_path(path))?;
    let expected: usize = m
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>())
        .sum::<usize>()
        * 4;
    if bytes.len() != expected || bytes.len() as u64 != m.payload_bytes {
        return Err(Error::CorruptPayload(format!(
            "payload has {} bytes, manifest implies {expected}",
            bytes.len()
        )));
    }
    let flat = le_bytes_to_f32s(&bytes);
    let mut offset = 0;
    let mut names = Vec::with_capacity(m.tensors.len());
    let mut tensors = Vec::with_capacity(m.tensors.len());
    for entry in m.tensors {
        let n: usize = entry.shape.iter().product();
        tensors.push(Tensor::new(entry.shape, flat[offset..offset + n].to_vec())?);
        names.push(entry.name);
        offset += n;
    }
    let parameters = ParameterSet::from_parts(names, tensors)?;
    parameters.check_schema(&m.config)?;
    m.normalization.validate()?;
    if m.normalization.band_names.len() != m.config.in_channels {
        return Err(Error::SchemaMismatch(
            "normalization bands do not match model channels".into(),
        ));
    }
    Ok(Checkpoint {
        config: m.config,
        parameters,
        normalization: m.normalization,
        pos_weight: m.pos_weight,
        metadata: m.metadata,
    })
}
