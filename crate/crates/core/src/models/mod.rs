//! Denoising networks, their conditioning inputs and training.

pub mod apdm;
pub mod common;
pub mod hoi;
pub mod pointset;
pub mod text;
pub mod train;

pub use apdm::{AffordanceDenoiser, ApdmConfig};
pub use common::Normalizer;
pub use hoi::{CommunicationModule, CrossAttention, HoiConfig, HoiDenoiser};
pub use pointset::PointSetEncoder;
pub use text::{null_embedding, text_embed, TEXT_DIM};
pub use train::{AffordanceExample, ApdmModel, HoiExample, HoiModel, SampleOptions, StepLog, TrainConfig, TrainReport, HOI_DIM};
