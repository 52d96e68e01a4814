//! Command-line argument definitions. Conversion helpers keep the flag
//! vocabulary decoupled from the library enums they map onto.

use std::path::PathBuf;

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand, ValueEnum};
use edgekit_core::metrics::ApMode;
use edgekit_core::simharness::selection_names;

#[derive(Debug, Parser)]
#[command(
    name = "edgekit",
    version,
    about = "Detection evaluation, blind-spot analysis, and curation at the command line"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate predictions against a dataset (mAP, per-class, per-tag)
    Eval(EvalArgs),
    /// Score model B only on annotations a baseline model failed to detect
    Blindspot(BlindspotArgs),
    /// Attach per-variant detection losses to caption records
    Edgeness(EdgenessArgs),
    /// Build preference pairs (hardest vs easiest variant) from scores
    Prefpairs(PrefpairsArgs),
    /// Preference loss over log-probability records, or a toy training run
    Dpo(DpoArgs),
    /// Partition a dataset into named splits by camera id
    Split(SplitArgs),
    /// Generate a synthetic dataset and simulated detections
    Simulate(SimulateArgs),
    /// Run one scored selection round over synthetic scene variants
    LoopDemo(LoopDemoArgs),
    /// Emit an evaluation table as CSV or JSON
    Report(ReportArgs),
}

/// AP integration mode flag.
#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    /// Sample the precision envelope at 101 recall points
    Interp101,
    /// Integrate exactly under the precision envelope
    #[value(name = "all_points")]
    AllPoints,
}

impl From<ModeArg> for ApMode {
    fn from(mode: ModeArg) -> ApMode {
        match mode {
            ModeArg::Interp101 => ApMode::Interp101,
            ModeArg::AllPoints => ApMode::AllPoints,
        }
    }
}

/// Output format flag.
#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    /// Comma-separated values, floats rounded to 3 decimals
    Csv,
    /// Pretty-printed JSON, full float precision
    Json,
}

/// What the `dpo` subcommand should do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DpoModeArg {
    /// Mean loss and per-pair margins over exported log-probabilities
    Loss,
    /// Gradient-descend a toy policy on text preference pairs
    TrainToy,
}

/// Table layout flag.
#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LayoutArg {
    /// One row: dataset, scene count, mAP, mAP w/o TP
    Overall,
    /// One row per annotated class
    #[value(name = "per_class")]
    PerClass,
    /// One row of tag-wise mAP for the M, E, and N settings
    #[value(name = "per_tag")]
    PerTag,
    /// Count, mean, median, and standard deviation of edge-ness scores
    #[value(name = "edgeness_stats")]
    EdgenessStats,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset file (scenes, annotations, categories)
    #[arg(long)]
    pub annotations: PathBuf,
    /// Predictions file
    #[arg(long)]
    pub predictions: PathBuf,
    /// AP integration mode
    #[arg(long, value_enum, default_value_t = ModeArg::Interp101)]
    pub mode: ModeArg,
    /// Write the JSON report here instead of standard output
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BlindspotArgs {
    /// Dataset file (scenes, annotations, categories)
    #[arg(long)]
    pub annotations: PathBuf,
    /// Baseline model predictions (model A, defines the blind spots)
    #[arg(long)]
    pub preds_a: PathBuf,
    /// Predictions under evaluation (model B)
    #[arg(long)]
    pub preds_b: PathBuf,
    /// Strict IoU above which a baseline detection counts as a true positive
    #[arg(long, default_value_t = 0.95)]
    pub tp_iou: f64,
    /// Model-B predictions on non-weak ground truth are dropped at or above
    /// this IoU
    #[arg(long, default_value_t = 0.5)]
    pub keep_iou: f64,
    /// Baseline predictions scoring below this are ignored
    #[arg(long, default_value_t = 0.25)]
    pub score_threshold: f64,
    /// AP integration mode
    #[arg(long, value_enum, default_value_t = ModeArg::Interp101)]
    pub mode: ModeArg,
    /// Write the JSON report here instead of standard output
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EdgenessArgs {
    /// Caption records, JSONL: {image_id, base_caption, variants, n}
    #[arg(long)]
    pub captions: PathBuf,
    /// Per-variant losses, JSONL: {image_id, variant_index, loss}
    #[arg(long)]
    pub losses: PathBuf,
    /// Write scored records here (JSONL) instead of standard output
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PrefpairsArgs {
    /// Caption records, JSONL: {image_id, base_caption, variants, n}
    #[arg(long)]
    pub captions: PathBuf,
    /// Edge-ness scores, JSONL: {image_id, variant_index, loss}
    #[arg(long)]
    pub scores: PathBuf,
    /// Write preference pairs here (JSONL) instead of standard output
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DpoArgs {
    /// What to compute
    #[arg(long, value_enum)]
    pub mode: DpoModeArg,
    /// Preference strength
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    /// Log-probability quadruples, JSONL (loss mode)
    #[arg(long, required_if_eq("mode", "loss"))]
    pub logprobs: Option<PathBuf>,
    /// Preference pairs, JSONL (train-toy mode); texts are tokenized on
    /// whitespace
    #[arg(long, required_if_eq("mode", "train-toy"))]
    pub pairs: Option<PathBuf>,
    /// Gradient-descent step size (train-toy mode)
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    /// Training epochs (train-toy mode)
    #[arg(long, default_value_t = 50)]
    pub epochs: u64,
    /// Seed for the reference policy's initial logits (train-toy mode)
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the JSON trace here instead of standard output
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Dataset file (scenes, annotations, categories)
    #[arg(long)]
    pub annotations: PathBuf,
    /// Split specification: {"name": [camera ids], ...}
    #[arg(long)]
    pub split: PathBuf,
    /// Directory receiving one dataset file per split name
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene-generator config, JSON; omitted fields use defaults
    #[arg(long)]
    pub scene_config: Option<PathBuf>,
    /// Detector noise profile, JSON; omitted fields use defaults
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Override the scene config's image count
    #[arg(long)]
    pub n_images: Option<u64>,
    /// Override the scene config's seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed for the simulated detector
    #[arg(long, default_value_t = 1)]
    pub detector_seed: u64,
    /// Directory receiving annotations.json and predictions.json
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct LoopDemoArgs {
    /// Scene-generator config, JSON; omitted fields use defaults
    #[arg(long)]
    pub scene_config: Option<PathBuf>,
    /// Detector noise profile, JSON; omitted fields use defaults
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Selection strategy
    #[arg(long, default_value = "max_loss",
          value_parser = PossibleValuesParser::new(selection_names()))]
    pub selection: String,
    /// How many variants to select from the pool
    #[arg(long, default_value_t = 10)]
    pub k: u64,
    /// Seed for variant jitter, detection, and selection
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the JSON summary here instead of standard output
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Which table to emit
    #[arg(long, value_enum)]
    pub layout: LayoutArg,
    /// Output format
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
    /// Dataset file (overall, per_class, per_tag)
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Predictions file (overall, per_class, per_tag)
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Baseline predictions for the mAP w/o TP column (overall)
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Edge-ness scores, JSONL (edgeness_stats)
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// AP integration mode
    #[arg(long, value_enum, default_value_t = ModeArg::Interp101)]
    pub mode: ModeArg,
    /// Strict IoU for the baseline's true positives (overall)
    #[arg(long, default_value_t = 0.95)]
    pub tp_iou: f64,
    /// Keep bound for model predictions on non-weak ground truth (overall)
    #[arg(long, default_value_t = 0.5)]
    pub keep_iou: f64,
    /// Baseline score cutoff (overall)
    #[arg(long, default_value_t = 0.25)]
    pub score_threshold: f64,
    /// Write the table here instead of standard output
    #[arg(long)]
    pub output: Option<PathBuf>,
}
