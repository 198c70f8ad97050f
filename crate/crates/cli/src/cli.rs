use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hoi_core::GuidanceConfig;

#[derive(Debug, Parser)]
#[command(name = "hoi", version, about = "Synthesize human-object interactions from text")]
pub struct Cli {
    /// Directory that relative paths are resolved against.
    #[arg(long, global = true, env = "HOI_DATA_ROOT", value_name = "DIR")]
    pub data_root: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a procedural corpus and split it into train/ and test/.
    GenData(GenDataArgs),
    /// Train the dual-branch motion denoiser.
    TrainHoi(TrainArgs),
    /// Train the affordance denoiser.
    TrainApdm(TrainArgs),
    /// Sample interactions, optionally with affordance-guided correction.
    Sample(SampleArgs),
    /// Re-derive affordance records from paired motions.
    Annotate(AnnotateArgs),
    /// Score generated samples against a reference dataset.
    Evaluate(EvaluateArgs),
    /// Write per-frame joints, object pose and contact points as CSV.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output directory; receives train/, test/ and skipped.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated actions (carry, lift-left, lift-right, sit, push, pull).
    #[arg(long, value_delimiter = ',')]
    pub actions: Option<Vec<String>>,
    /// Comma-separated objects (box, chair, table, ball).
    #[arg(long, value_delimiter = ',')]
    pub objects: Option<Vec<String>>,
    #[arg(long, default_value_t = 4)]
    pub samples_per_pair: usize,
    /// Frames per sequence.
    #[arg(long, default_value_t = 196)]
    pub length: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Toy,
    Full,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write. The loss curve goes to <out>.loss.csv and the
    /// summary to <out>.report.json.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with `model`, `train` and `schedule` sections (each optional).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Toy)]
    pub preset: Preset,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub pretrain_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Diffusion step count.
    #[arg(long)]
    pub timesteps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Motion denoiser checkpoint.
    #[arg(long)]
    pub hoi: PathBuf,
    /// Affordance denoiser checkpoint. Without it the source sample's
    /// ground-truth affordance is used.
    #[arg(long)]
    pub apdm: Option<PathBuf>,
    /// Dataset supplying object clouds (and prompts, if none is given).
    #[arg(long, conflicts_with = "object")]
    pub from: Option<PathBuf>,
    /// First source sample in --from.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Generate a fresh object cloud of this kind instead of using --from.
    #[arg(long)]
    pub object: Option<String>,
    /// Seed for the generated object shape.
    #[arg(long, default_value_t = 0)]
    pub shape_seed: u64,
    #[arg(long)]
    pub prompt: Option<String>,
    /// Number of samples; sample k uses seed + k and source index + k.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Output dataset directory; also receives report.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub guidance: Switch,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = GuidanceConfig::default().tau1)]
    pub tau1: f64,
    #[arg(long, default_value_t = GuidanceConfig::default().tau2)]
    pub tau2: f64,
    /// Weight of the static-object term.
    #[arg(long, default_value_t = GuidanceConfig::default().alpha)]
    pub alpha: f64,
    /// Weight of the object smoothness term.
    #[arg(long, default_value_t = GuidanceConfig::default().beta)]
    pub beta: f64,
    /// Classifier-free guidance scale for both denoisers.
    #[arg(long, default_value_t = hoi_core::diffusion::DEFAULT_CFG_SCALE)]
    pub cfg_scale: f64,
    /// Frames to generate (defaults to the source length, else 196).
    #[arg(long)]
    pub length: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output JSON file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EncoderKind {
    /// Per-joint height and speed statistics.
    JointStats,
    /// Raw flattened features (equal lengths only).
    Flatten,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Reference dataset.
    #[arg(long)]
    pub real: PathBuf,
    /// Generated dataset.
    #[arg(long)]
    pub generated: PathBuf,
    /// Output JSON file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a one-row CSV table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = EncoderKind::JointStats)]
    pub encoder: EncoderKind,
    #[arg(long, default_value_t = hoi_core::metrics::DEFAULT_DIVERSITY_PAIRS)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long)]
    pub out: PathBuf,
}
