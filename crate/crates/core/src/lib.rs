//! Text-conditioned human-object interaction synthesis: a dual-branch motion
//! diffusion model, an affordance diffusion model, affordance-guided
//! correction during sampling, metrics and a procedural training corpus.

pub mod affordance;
pub mod corpus;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod guidance;
pub mod io;
pub mod metrics;
pub mod models;
pub mod motion;
pub mod nn;
pub mod skeleton;

pub use affordance::{AffordanceRecord, ObjectState};
pub use corpus::{Action, CorpusSpec, HoiSample, ObjectKind};
pub use diffusion::{NoiseSchedule, ScheduleConfig};
pub use error::{Error, Result};
pub use geometry::{PointCloud, Pose6DoF, Vec3};
pub use guidance::{GuidanceConfig, GuidedSampleConfig};
pub use metrics::EvalReport;
pub use models::{ApdmConfig, ApdmModel, HoiConfig, HoiModel, TrainConfig};
pub use motion::{HumanMotionSeq, ObjectMotionSeq};
