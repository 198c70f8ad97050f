//! Model checkpoints in a single file:
//!
//! ```text
//! magic    8 bytes   "HOICKPT\0"
//! length   u64 LE    byte length of the manifest
//! manifest JSON      CheckpointManifest
//! data     f32 LE    tensors, row-major, at the manifest offsets
//! ```
//!
//! Offsets and lengths in the manifest count f32 values from the start of
//! the data section. Normalization statistics are stored as tensors named
//! `norm.*`; everything else is a model parameter.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{decode_f32, encode_f32};
use crate::diffusion::ScheduleConfig;
use crate::error::{Error, Result};
use crate::models::{ApdmConfig, ApdmModel, HoiConfig, HoiModel, Normalizer};
use crate::nn::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HOICKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Hoi,
    Apdm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub kind: ModelKind,
    pub config: serde_json::Value,
    pub schedule: ScheduleConfig,
    pub tensors: Vec<TensorEntry>,
}

struct Tensors {
    entries: Vec<TensorEntry>,
    data: Vec<f64>,
}

impl Tensors {
    fn new() -> Self {
        Self {
            entries: Vec::new(),
            data: Vec::new(),
        }
    }

    fn push(&mut self, name: &str, value: &Array2<f64>) {
        let (r, c) = value.dim();
        self.entries.push(TensorEntry {
            name: name.into(),
            shape: [r, c],
            offset: self.data.len(),
        });
        self.data.extend(value.iter());
    }

    fn push_params(&mut self, params: &ParamStore<f32>) {
        for (_, name, value) in params.iter() {
            self.push(name, &value.mapv(f64::from));
        }
    }

    fn push_norm(&mut self, prefix: &str, norm: &Normalizer) {
        let row = |a: &Array1<f64>| a.clone().insert_axis(ndarray::Axis(0));
        self.push(&format!("{prefix}.mean"), &row(&norm.mean));
        self.push(&format!("{prefix}.std"), &row(&norm.std));
    }
}

fn write_checkpoint(path: &Path, kind: ModelKind, config: serde_json::Value, schedule: ScheduleConfig, t: Tensors) -> Result<()> {
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        kind,
        config,
        schedule,
        tensors: t.entries,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(16 + json.len() + 4 * t.data.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&encode_f32(&t.data));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Loaded {
    manifest: CheckpointManifest,
    tensors: HashMap<String, Array2<f64>>,
}

impl Loaded {
    fn take(&mut self, name: &str) -> Result<Array2<f64>> {
        self.tensors
            .remove(name)
            .ok_or_else(|| Error::format(format!("tensors.{name}"), "missing"))
    }

    fn take_norm(&mut self, prefix: &str, dim: usize) -> Result<Normalizer> {
        let mut row = |name: String| -> Result<Array1<f64>> {
            let t = self.take(&name)?;
            if t.dim() != (1, dim) {
                return Err(Error::format(format!("tensors.{name}"), format!("expected shape [1, {dim}], found {:?}", t.dim())));
            }
            Ok(t.row(0).to_owned())
        };
        Ok(Normalizer {
            mean: row(format!("{prefix}.mean"))?,
            std: row(format!("{prefix}.std"))?,
        })
    }

    /// Moves every parameter of `params` out of the file, checking shapes.
    fn fill_params(&mut self, params: &mut ParamStore<f32>) -> Result<()> {
        let names: Vec<(crate::nn::ParamId, String)> = params.iter().map(|(id, n, _)| (id, n.to_string())).collect();
        for (id, name) in names {
            let t = self.take(&name)?;
            let slot = params.get_mut(id);
            if t.dim() != slot.dim() {
                return Err(Error::format(
                    format!("tensors.{name}"),
                    format!("expected shape {:?}, found {:?}", slot.dim(), t.dim()),
                ));
            }
            *slot = t.mapv(|v| v as f32);
        }
        if let Some(extra) = self.tensors.keys().min() {
            return Err(Error::format(format!("tensors.{extra}"), "not a parameter of this model"));
        }
        Ok(())
    }
}

fn read_checkpoint(path: &Path, expected: ModelKind) -> Result<Loaded> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::format("magic", "not a checkpoint file"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let end = 16usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::format("manifest", "length runs past the end of the file"))?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes[16..end]).map_err(|e| Error::format("manifest", e.to_string()))?;
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::format("version", "missing or not an integer"))?;
    if version != CHECKPOINT_VERSION as u64 {
        return Err(Error::Version {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: CHECKPOINT_VERSION,
        });
    }
    let manifest: CheckpointManifest =
        serde_json::from_value(value).map_err(|e| Error::format("manifest", e.to_string()))?;
    if manifest.kind != expected {
        return Err(Error::format("kind", format!("expected {expected:?} checkpoint, found {:?}", manifest.kind)));
    }
    let data = decode_f32(&bytes[end..]).map_err(|r| Error::format("data", r))?;
    let mut tensors = HashMap::new();
    for t in &manifest.tensors {
        let n = t.shape[0] * t.shape[1];
        if t.offset + n > data.len() {
            return Err(Error::format(format!("tensors.{}", t.name), "extends past the data section"));
        }
        let a = Array2::from_shape_vec((t.shape[0], t.shape[1]), data[t.offset..t.offset + n].to_vec()).expect("sized");
        if tensors.insert(t.name.clone(), a).is_some() {
            return Err(Error::format(format!("tensors.{}", t.name), "duplicate tensor"));
        }
    }
    Ok(Loaded { manifest, tensors })
}

pub fn save_hoi(model: &HoiModel, path: &Path) -> Result<()> {
    let mut t = Tensors::new();
    t.push_norm("norm.human", &model.human_norm);
    t.push_norm("norm.object", &model.object_norm);
    t.push_params(&model.params);
    write_checkpoint(path, ModelKind::Hoi, serde_json::to_value(&model.config)?, model.schedule.config(), t)
}

pub fn load_hoi(path: &Path) -> Result<HoiModel> {
    let mut l = read_checkpoint(path, ModelKind::Hoi)?;
    let config: HoiConfig =
        serde_json::from_value(l.manifest.config.clone()).map_err(|e| Error::format("config", e.to_string()))?;
    let schedule = l.manifest.schedule.build()?;
    let hn = l.take_norm("norm.human", crate::motion::FEATURE_DIM)?;
    let on = l.take_norm("norm.object", crate::motion::OBJECT_DIM)?;
    let mut model = HoiModel::new(config, schedule, hn, on, 0)?;
    l.fill_params(&mut model.params)?;
    Ok(model)
}

pub fn save_apdm(model: &ApdmModel, path: &Path) -> Result<()> {
    let mut t = Tensors::new();
    t.push_norm("norm.affordance", &model.norm);
    t.push_params(&model.params);
    write_checkpoint(path, ModelKind::Apdm, serde_json::to_value(&model.config)?, model.schedule.config(), t)
}

pub fn load_apdm(path: &Path) -> Result<ApdmModel> {
    let mut l = read_checkpoint(path, ModelKind::Apdm)?;
    let config: ApdmConfig =
        serde_json::from_value(l.manifest.config.clone()).map_err(|e| Error::format("config", e.to_string()))?;
    let schedule = l.manifest.schedule.build()?;
    let norm = l.take_norm("norm.affordance", crate::affordance::AFFORDANCE_DIM)?;
    let mut model = ApdmModel::new(config, schedule, norm, 0)?;
    l.fill_params(&mut model.params)?;
    Ok(model)
}
