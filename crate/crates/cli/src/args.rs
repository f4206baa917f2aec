use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "rooftop", version, about = "Roof-material classification pipeline")]
pub struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Where to write the run manifest (default: next to the primary output).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate synthetic maps, footprints and held-out truth.
    Synth(SynthArgs),
    /// Validate map images and GeoJSON footprints into a dataset file.
    Ingest(IngestArgs),
    /// Extract one PNG chip per building.
    Chip(ChipArgs),
    /// Adapt convolution weights to a different input channel count.
    AdaptWeights(AdaptArgs),
    /// Render a contact sheet of augmented chips.
    AugmentPreview(PreviewArgs),
    /// Assign labeled buildings to validation folds per map.
    Folds(FoldsArgs),
    /// Out-of-fold predictions of a base model.
    Oof(OofArgs),
    /// Assemble second-level features.
    Features(FeaturesArgs),
    /// Train the second-level model.
    TrainStack(TrainArgs),
    /// Predict with a trained second-level model.
    Predict(PredictArgs),
    /// Log loss and accuracy of predictions against known labels.
    Evaluate(EvaluateArgs),
    /// Tabulate several metrics files.
    Report(ReportArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub maps: u8,
    /// Fraction of each map's labels moved to the held-out truth file.
    #[arg(long, default_value_t = 0.3)]
    pub test_fraction: f64,
    /// Maps whose labels are marked unverified (train-only).
    #[arg(long, value_delimiter = ',')]
    pub unverified: Vec<u8>,
    /// JSON file with generator parameters; the flags below override it.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Generator seed [default: 42].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Buildings per map [default: 1000].
    #[arg(long)]
    pub buildings: Option<usize>,
    /// Map side length in pixels [default: 2048].
    #[arg(long)]
    pub map_size: Option<u32>,
    /// Number of label clusters [default: 12].
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Probability that a label is redrawn from the class prior [default: 0.05].
    #[arg(long)]
    pub label_noise: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
pub struct IngestArgs {
    /// `MAP_ID:IMAGE.png:FOOTPRINTS.geojson`, repeatable.
    #[arg(long = "map", required = true)]
    pub maps: Vec<String>,
    /// Dataset file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ChipArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub margin: u32,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptMode {
    Zero,
    Proportional,
}

#[derive(Args, Debug, Serialize)]
pub struct AdaptArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub mode: AdaptMode,
    /// Target input channel count.
    #[arg(long)]
    pub channels: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct PreviewArgs {
    /// Chip directory written by `chip`.
    #[arg(long)]
    pub chips: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Augment this building repeatedly instead of the first chips.
    #[arg(long)]
    pub building: Option<String>,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = 4)]
    pub cols: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Augmentation config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct FoldsArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum BaseModelKind {
    /// Nearest-palette colour oracle with seeded noise.
    Oracle,
    /// Class frequencies of the fold's training rows.
    Prior,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MeanKind {
    Arithmetic,
    Geometric,
}

#[derive(Args, Debug, Serialize)]
pub struct OofArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub chips: PathBuf,
    #[arg(long)]
    pub folds: PathBuf,
    #[arg(long, value_enum, default_value_t = BaseModelKind::Oracle)]
    pub model: BaseModelKind,
    #[arg(long, default_value_t = 0.3)]
    pub confusion: f64,
    #[arg(long, default_value_t = 0)]
    pub model_seed: u64,
    /// Generator parameters holding the oracle palette (default: synth_params.json beside the dataset).
    #[arg(long)]
    pub palette: Option<PathBuf>,
    /// Average over 8 dihedral variants x margins 0, 25, 50, 75.
    #[arg(long)]
    pub tta: bool,
    #[arg(long, value_enum, default_value_t = MeanKind::Arithmetic)]
    pub tta_mean: MeanKind,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// OOF prediction files; the file stem names the model.
    #[arg(long, required = true)]
    pub oof: Vec<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub k_neighbors: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![100.0, 300.0, 1000.0])]
    pub radii: Vec<f64>,
    /// Feature CSV; the JSON sidecar is written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Gbdt,
    Logistic,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub folds: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub members: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = LearnerKind::Gbdt)]
    pub learner: LearnerKind,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write each ensemble member's predictions into this directory.
    #[arg(long)]
    pub per_member: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Truth CSV (`map_id,id,label`).
    #[arg(long, conflicts_with = "labels")]
    pub truth: Option<PathBuf>,
    /// Evaluate against the verified visible labels of this dataset instead.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Metrics JSON to write; printed to stdout regardless.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct ReportArgs {
    /// Metrics files, optionally as `NAME=PATH`.
    #[arg(long, required = true)]
    pub metrics: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
