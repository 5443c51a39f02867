use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use vizaudit_core::netgraph::Split;

#[derive(Debug, Parser)]
#[command(name = "vizaudit", version, about = "Feature-visualization audit experiments")]
pub struct Cli {
    /// Root directory for run directories.
    #[arg(long, global = true, env = "VIZAUDIT_OUT")]
    pub out: Option<PathBuf>,
    /// Re-run even when the run directory already exists.
    #[arg(long, global = true)]
    pub force: bool,
    /// Replay the resolved config of an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Create or import labelled image sets.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Train networks.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Visualize units by gradient ascent on the input.
    Viz(VizArgs),
    /// Build manipulated networks.
    #[command(subcommand)]
    Fool(FoolCmd),
    /// Natural-vs-synthetic image classifier.
    #[command(subcommand)]
    Detector(DetectorCmd),
    /// Compare two networks on a dataset.
    #[command(subcommand)]
    Audit(AuditCmd),
    /// Layerwise path similarity of natural images and class visualizations.
    Pathsim(PathsimArgs),
    /// Count ReLU units that never fire on a dataset.
    Census(CensusArgs),
    /// Gradient-angle and line-distance profiles of visualization trajectories.
    Linearity(LinearityArgs),
    /// Verify the min/max summary impossibility results on grids.
    #[command(subcommand)]
    Theory(TheoryCmd),
}

impl Command {
    /// Short name used as the run-directory prefix.
    pub fn name(&self) -> &'static str {
        match self {
            Command::Dataset(DatasetCmd::Gen(_)) => "dataset-gen",
            Command::Dataset(DatasetCmd::Import(_)) => "dataset-import",
            Command::Train(TrainCmd::Base(_)) => "train-base",
            Command::Viz(_) => "viz",
            Command::Fool(FoolCmd::Circuit(_)) => "fool-circuit",
            Command::Fool(FoolCmd::Silent(_)) => "fool-silent",
            Command::Detector(DetectorCmd::Train(_)) => "detector-train",
            Command::Detector(DetectorCmd::Eval(_)) => "detector-eval",
            Command::Audit(AuditCmd::Preserve(_)) => "audit-preserve",
            Command::Pathsim(_) => "pathsim",
            Command::Census(_) => "census",
            Command::Linearity(_) => "linearity",
            Command::Theory(TheoryCmd::Verify(_)) => "theory-verify",
            Command::Theory(TheoryCmd::Demo(_)) => "theory-demo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetCmd {
    /// Procedural shape/texture classes.
    Gen(DatasetGenArgs),
    /// MNIST-style IDX image and label files.
    Import(DatasetImportArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DatasetGenArgs {
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    /// Image height and width.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DatasetImportArgs {
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Zero-pad (centred) to this height and width.
    #[arg(long)]
    pub pad_to: Option<usize>,
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    pub split: SplitArg,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainCmd {
    /// The four-block convolutional classifier.
    Base(TrainBaseArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct Hyper {
    #[arg(long, default_value_t = 8)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 5e-5)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainBaseArgs {
    /// Training dataset manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Optional held-out dataset for test accuracy.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: Hyper,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Gradient-ascent settings shared by every command that visualizes.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct VizOpts {
    #[arg(long, default_value_t = 512)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub viz_lr: f64,
    /// Maximum per-step shift in pixels.
    #[arg(long, default_value_t = 2)]
    pub jitter: usize,
    #[arg(long, default_value_t = 0.01)]
    pub init_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct VizArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Unit as `layer:channel` (channel mean) or `layer:channel@y,x`; repeatable.
    #[arg(long = "unit", required = true)]
    pub units: Vec<String>,
    #[command(flatten)]
    pub viz: VizOpts,
    /// Steps at which images are recorded; defaults to 5 log-spaced steps.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Vec<usize>,
    /// Start image (PGM/PPM) instead of the noisy grey default.
    #[arg(long)]
    pub start: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FoolCmd {
    /// Graft a detector-gated circuit onto the output units.
    Circuit(FoolCircuitArgs),
    /// Add silent branches to a conv block.
    Silent(FoolSilentArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleArg {
    Natural,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[command(group(ArgGroup::new("mode").required(true).args(["offset", "embed"])))]
#[command(group(ArgGroup::new("gate").required(true).args(["detector", "oracle"])))]
pub struct FoolCircuitArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset whose images calibrate the gate constant.
    #[arg(long)]
    pub calib: PathBuf,
    /// Permutation mode: unit i shows unit (i + offset) mod n.
    #[arg(long)]
    pub offset: Option<usize>,
    /// Embedded mode: decoy image (PGM/PPM) shown by `--unit`.
    #[arg(long)]
    pub embed: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub unit: usize,
    /// Trained detector model.
    #[arg(long)]
    pub detector: Option<PathBuf>,
    /// Constant detector instead of a trained one.
    #[arg(long, value_enum)]
    pub oracle: Option<OracleArg>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[command(group(ArgGroup::new("target").args(["target_unit", "target_seed"])))]
pub struct FoolSilentArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Natural training set the branches must stay silent on.
    #[arg(long)]
    pub data: PathBuf,
    /// Conv layer heading a conv -> [batch norm] -> ReLU block.
    #[arg(long)]
    pub layer: String,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.05)]
    pub margin: f64,
    /// Channels to wrap; all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub channels: Vec<usize>,
    /// Target filter: input features under the centre of this channel's
    /// visualization (the default, channel 0).
    #[arg(long)]
    pub target_unit: Option<usize>,
    /// Target filter: uniform random weights from this seed.
    #[arg(long)]
    pub target_seed: Option<u64>,
    #[command(flatten)]
    pub viz: VizOpts,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorCmd {
    /// Train on natural images against visualization trajectories.
    Train(DetectorTrainArgs),
    /// Accuracy on natural images and held-out trajectories.
    Eval(DetectorEvalArgs),
}

/// Where the synthetic images come from.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PoolOpts {
    /// Model whose units are visualized.
    #[arg(long)]
    pub model: PathBuf,
    /// Units to visualize; repeatable.
    #[arg(long = "unit", required = true)]
    pub units: Vec<String>,
    /// Trajectory seeds run with `--jitter`.
    #[arg(long, value_delimiter = ',')]
    pub pool_seeds: Vec<u64>,
    /// Extra trajectory seeds run without jitter.
    #[arg(long, value_delimiter = ',')]
    pub zero_jitter_seeds: Vec<u64>,
    #[command(flatten)]
    pub viz: VizOpts,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DetectorTrainArgs {
    /// Natural images.
    #[arg(long)]
    pub natural: PathBuf,
    #[command(flatten)]
    pub pool: PoolOpts,
    #[command(flatten)]
    pub hyper: Hyper,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DetectorEvalArgs {
    #[arg(long)]
    pub detector: PathBuf,
    #[arg(long)]
    pub natural: PathBuf,
    #[command(flatten)]
    pub pool: PoolOpts,
    #[arg(long, default_value_t = 0.95)]
    pub min_overall: f64,
    #[arg(long, default_value_t = 0.90)]
    pub min_per_class: f64,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditCmd {
    /// Output deviation and top-1/top-5 agreement of two models.
    Preserve(AuditPreserveArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct AuditPreserveArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub modified: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.99)]
    pub min_top1: f64,
    /// Fail when any output deviates by more than this.
    #[arg(long)]
    pub max_diff: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricArg {
    Spearman,
    Pearson,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PathsimArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Classes to analyse; all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<usize>,
    /// Layers to compare; every ReLU layer and the output when omitted.
    #[arg(long = "layer")]
    pub layers: Vec<String>,
    /// Correctly classified images kept per class.
    #[arg(long, default_value_t = 10)]
    pub per_class: usize,
    /// Visualizations per class unit.
    #[arg(long, default_value_t = 2)]
    pub viz_runs: usize,
    #[arg(long, value_enum, default_value_t = MetricArg::Spearman)]
    pub metric: MetricArg,
    #[arg(long, default_value_t = 7)]
    pub window: usize,
    #[arg(long, default_value_t = 5)]
    pub std_window: usize,
    #[command(flatten)]
    pub viz: VizOpts,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CensusArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct LinearityArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Units to profile; repeatable.
    #[arg(long = "unit", required = true)]
    pub units: Vec<String>,
    /// Start images per unit.
    #[arg(long, default_value_t = 3)]
    pub starts: usize,
    /// Points on the distance profile.
    #[arg(long, default_value_t = 16)]
    pub points: usize,
    /// Two-column `unit,score` CSV to correlate against.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[command(flatten)]
    pub viz: VizOpts,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TheoryCmd {
    /// Counterexample pairs and decoder bounds per class.
    Verify(TheoryArgs),
    /// The class table with one verified row per class.
    Demo(TheoryArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TheoryArgs {
    /// Class such as `convex`, `lipschitz(4)` or `affine(2)`; repeatable.
    /// Every class when omitted.
    #[arg(long = "class")]
    pub classes: Vec<String>,
    #[arg(long, default_value_t = 500)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Points of the 1-D grid.
    #[arg(long, default_value_t = 1001)]
    pub n1: usize,
    /// Points per axis of the 2-D grid.
    #[arg(long, default_value_t = 101)]
    pub n2: usize,
}
