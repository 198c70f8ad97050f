//! On-disk formats for datasets and model checkpoints.

pub mod checkpoint;
pub mod dataset;

pub use checkpoint::{load_apdm, load_hoi, save_apdm, save_hoi, CheckpointManifest, ModelKind, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dataset::{read_dataset, write_dataset, DatasetManifest, DATASET_VERSION};

/// Little-endian f32 encoding of `values`.
pub(crate) fn encode_f32(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub(crate) fn decode_f32(bytes: &[u8]) -> Result<Vec<f64>, String> {
    if bytes.len() % 4 != 0 {
        return Err(format!("length {} is not a multiple of 4 bytes", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}
