//! Dataset directories: `manifest.json` plus one little-endian f32 blob per
//! sample. Each blob concatenates the tensors listed in the sample's
//! `fields` entry, row-major, in that order:
//!
//! | field      | shape       |
//! |------------|-------------|
//! | `human`    | `[L, 263]`  |
//! | `object`   | `[L, 6]`    |
//! | `cloud`    | `[P, 3]`    |
//! | `normals`  | `[P, 3]` (optional) |
//! | `contacts` | `[2, 3]`    |
//!
//! Contact labels and the object state are stored in the manifest.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{decode_f32, encode_f32};
use crate::affordance::{AffordanceRecord, ObjectState, LABEL_DIM};
use crate::corpus::{Action, HoiSample, ObjectKind};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};
use crate::motion::{HumanMotionSeq, ObjectMotionSeq, FEATURE_DIM, OBJECT_DIM};

pub const DATASET_FORMAT: &str = "hoi-dataset";
pub const DATASET_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub prompt: String,
    pub action: Option<Action>,
    pub object: Option<ObjectKind>,
    pub blob: String,
    pub fields: Vec<FieldEntry>,
    /// Contact label slots that are set, ascending.
    pub labels: Vec<usize>,
    pub state: ObjectState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub samples: Vec<SampleEntry>,
}

fn field(name: &str, shape: &[usize]) -> FieldEntry {
    FieldEntry {
        name: name.into(),
        shape: shape.to_vec(),
    }
}

fn push_points(out: &mut Vec<f64>, pts: &[Vec3]) {
    for p in pts {
        out.extend([p.x, p.y, p.z]);
    }
}

/// Writes samples into `dir` (created if missing). Values are stored as f32.
pub fn write_dataset(samples: &[HoiSample], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        s.validate()?;
        let l = s.len();
        let p = s.cloud.len();
        let mut fields = vec![field("human", &[l, FEATURE_DIM]), field("object", &[l, OBJECT_DIM]), field("cloud", &[p, 3])];
        let mut data: Vec<f64> = Vec::new();
        data.extend(s.human.frames().iter());
        data.extend(s.object.frames().iter());
        push_points(&mut data, s.cloud.points());
        if let Some(n) = s.cloud.normals() {
            fields.push(field("normals", &[p, 3]));
            push_points(&mut data, n);
        }
        fields.push(field("contacts", &[2, 3]));
        push_points(&mut data, s.affordance.points());
        let blob = format!("{i:05}.bin");
        let path = dir.join(&blob);
        fs::write(&path, encode_f32(&data)).map_err(|e| Error::io(&path, e))?;
        entries.push(SampleEntry {
            id: s.id.clone(),
            prompt: s.prompt.clone(),
            action: s.action,
            object: s.object_kind,
            blob,
            fields,
            labels: s.affordance.active(),
            state: s.affordance.state,
        });
    }
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        samples: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Parses a manifest, checking the format tag and version before the schema.
pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::format("manifest", e.to_string()))?;
    match value.get("format").and_then(|v| v.as_str()) {
        Some(DATASET_FORMAT) => {}
        other => return Err(Error::format("format", format!("expected \"{DATASET_FORMAT}\", found {other:?}"))),
    }
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::format("version", "missing or not an integer"))?;
    if version != DATASET_VERSION as u64 {
        return Err(Error::Version {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: DATASET_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| Error::format("manifest", e.to_string()))
}

struct Reader<'a> {
    data: &'a [f64],
    pos: usize,
    prefix: String,
}

impl Reader<'_> {
    fn take(&mut self, entry: &FieldEntry, name: &str, width: Option<usize>) -> Result<Array2<f64>> {
        let field = format!("{}.fields.{name}", self.prefix);
        if entry.name != name {
            return Err(Error::format(field, format!("expected field `{name}`, found `{}`", entry.name)));
        }
        let [rows, cols] = entry.shape[..] else {
            return Err(Error::format(field, format!("expected a 2-d shape, found {:?}", entry.shape)));
        };
        if let Some(w) = width {
            if cols != w {
                return Err(Error::format(field, format!("expected width {w}, found {cols}")));
            }
        }
        let n = rows * cols;
        if self.pos + n > self.data.len() {
            return Err(Error::format(
                format!("{}.blob", self.prefix),
                format!("blob ends before field `{name}` ({} values short)", self.pos + n - self.data.len()),
            ));
        }
        let out = Array2::from_shape_vec((rows, cols), self.data[self.pos..self.pos + n].to_vec()).expect("sized");
        self.pos += n;
        Ok(out)
    }
}

fn points_of(a: &Array2<f64>) -> Vec<Vec3> {
    a.outer_iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect()
}

fn read_sample(dir: &Path, i: usize, entry: &SampleEntry) -> Result<HoiSample> {
    let prefix = format!("samples[{i}]");
    let path = dir.join(&entry.blob);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let data = decode_f32(&bytes).map_err(|reason| Error::format(format!("{prefix}.blob"), reason))?;
    let mut fields = entry.fields.iter();
    let mut next = |name: &str| {
        fields
            .next()
            .ok_or_else(|| Error::format(format!("{prefix}.fields"), format!("missing field `{name}`")))
    };
    let mut r = Reader {
        data: &data,
        pos: 0,
        prefix: prefix.clone(),
    };
    let human = r.take(next("human")?, "human", Some(FEATURE_DIM))?;
    let object = r.take(next("object")?, "object", Some(OBJECT_DIM))?;
    if human.nrows() != object.nrows() {
        return Err(Error::format(
            format!("{prefix}.fields.object"),
            format!("{} frames, human has {}", object.nrows(), human.nrows()),
        ));
    }
    let cloud = r.take(next("cloud")?, "cloud", Some(3))?;
    let mut entry_fields: Vec<&FieldEntry> = Vec::new();
    while let Ok(f) = next("contacts") {
        entry_fields.push(f);
    }
    let (normals, contacts) = match entry_fields.as_slice() {
        [c] => (None, r.take(c, "contacts", Some(3))?),
        [n, c] => {
            let normals = r.take(n, "normals", Some(3))?;
            if normals.nrows() != cloud.nrows() {
                return Err(Error::format(format!("{prefix}.fields.normals"), "one normal per cloud point required"));
            }
            (Some(normals), r.take(c, "contacts", Some(3))?)
        }
        _ => {
            return Err(Error::format(
                format!("{prefix}.fields"),
                format!("expected 4 or 5 fields, found {}", entry.fields.len()),
            ))
        }
    };
    if contacts.nrows() != 2 {
        return Err(Error::format(format!("{prefix}.fields.contacts"), "expected 2 contact points"));
    }
    if r.pos != data.len() {
        return Err(Error::format(
            format!("{prefix}.blob"),
            format!("{} trailing values", data.len() - r.pos),
        ));
    }

    let human = HumanMotionSeq::new(human).map_err(|e| Error::format(format!("{prefix}.fields.human"), e.to_string()))?;
    let object =
        ObjectMotionSeq::new(object).map_err(|e| Error::format(format!("{prefix}.fields.object"), e.to_string()))?;
    let mut cloud = PointCloud::new_any_size(points_of(&cloud))
        .map_err(|e| Error::format(format!("{prefix}.fields.cloud"), e.to_string()))?;
    if let Some(n) = normals {
        cloud = cloud
            .with_normals(points_of(&n))
            .map_err(|e| Error::format(format!("{prefix}.fields.normals"), e.to_string()))?;
    }
    let mut labels = [false; LABEL_DIM];
    for &s in &entry.labels {
        if s >= LABEL_DIM {
            return Err(Error::format(format!("{prefix}.labels"), format!("slot {s} out of range")));
        }
        labels[s] = true;
    }
    let pts = points_of(&contacts);
    let affordance = AffordanceRecord::new(labels, [pts[0], pts[1]], entry.state)
        .map_err(|e| Error::format(format!("{prefix}.labels"), e.to_string()))?;
    Ok(HoiSample {
        id: entry.id.clone(),
        prompt: entry.prompt.clone(),
        human,
        object,
        cloud,
        affordance,
        action: entry.action,
        object_kind: entry.object,
    })
}

pub fn read_dataset(dir: &Path) -> Result<Vec<HoiSample>> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest = parse_manifest(&text)?;
    manifest
        .samples
        .iter()
        .enumerate()
        .map(|(i, e)| read_sample(dir, i, e))
        .collect()
}
