use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "poselift", version, about = "Lift 2D keypoints to 3D poses with a diffusion prior")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Run seed; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file with settings for this command.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (only `lift` runs in parallel).
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic skeletons with exact projections.
    Synth(SynthArgs),
    /// Train an unconditional prior.
    TrainPrior(TrainPriorArgs),
    /// Adapt a prior to new-domain poses.
    Adapt(AdaptArgs),
    /// Lift 2D keypoints to 3D.
    Lift(LiftArgs),
    /// Transfer poses to another domain with a conditional prior.
    Augment(AugmentArgs),
    /// MPJPE of predictions against ground truth.
    Eval(EvalArgs),
    /// Bone length and angle statistics.
    Stats(StatsArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub bone_scale: Option<f64>,
    #[arg(long)]
    pub pose_variation: Option<f64>,
    #[arg(long)]
    pub domain: Option<String>,
    #[arg(long)]
    pub id_prefix: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainPriorArgs {
    #[command(flatten)]
    pub common: Common,
    /// Record file with 3D poses.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args, Debug)]
pub struct AdaptArgs {
    #[command(flatten)]
    pub common: Common,
    /// Record file with new-domain 3D poses.
    #[arg(long)]
    pub data: PathBuf,
    /// Pre-trained prior (required for ca and ft).
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long, value_parser = ["ca", "ft", "scratch"])]
    pub strategy: Option<String>,
    /// Train on the first N records by id.
    #[arg(long)]
    pub limit: Option<usize>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args, Debug)]
pub struct LiftArgs {
    #[command(flatten)]
    pub common: Common,
    /// Prior checkpoint.
    #[arg(long)]
    pub prior: PathBuf,
    /// Records with 2D keypoints and intrinsics.
    #[arg(long)]
    pub data: PathBuf,
    /// Records whose 3D poses seed the rigid initialization.
    #[arg(long)]
    pub pool: PathBuf,
    /// Directory for per-record trace CSVs.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub depth_freeze_until: Option<usize>,
    #[arg(long)]
    pub init_steps: Option<usize>,
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub common: Common,
    /// Source-domain records to transfer.
    #[arg(long)]
    pub source: PathBuf,
    /// Target-domain records; with --source they train the conditional prior.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Existing conditional prior instead of training one.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub noise_start: Option<f64>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub bins: Option<usize>,
}
