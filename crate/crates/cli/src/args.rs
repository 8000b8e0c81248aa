use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "gomkit", version, about = "Time-varying gesture operational models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled dataset and its true coefficients from a synthetic spec.
    Synth(SynthArgs),
    /// Train coefficient trajectories and write exchange files.
    Fit(FitArgs),
    /// Roll a coefficient model forward from two seed frames.
    Generate(GenerateArgs),
    /// Compare a generated motion CSV with a reference one.
    Metrics(MetricsArgs),
    /// Per-timestep significance tests of every coefficient.
    Analyze(AnalyzeArgs),
    /// Rank regressor channels by significance and pick sensors.
    SelectSensors(SelectArgs),
    /// Coefficient tolerance bands across repetitions.
    Tolerance(ToleranceArgs),
    /// Cross-validated HMM recognition on a channel subset.
    Recognize(RecognizeArgs),
    /// Validate an externally produced coefficient-exchange file.
    ImportCoeffs(ImportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Fit(_) => "fit",
            Command::Generate(_) => "generate",
            Command::Metrics(_) => "metrics",
            Command::Analyze(_) => "analyze",
            Command::SelectSensors(_) => "select-sensors",
            Command::Tolerance(_) => "tolerance",
            Command::Recognize(_) => "recognize",
            Command::ImportCoeffs(_) => "import-coeffs",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Kf,
    Imported,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub method: FitMethod,
    /// Directory of motion CSVs (kf).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Exchange file to adopt as the model (imported).
    #[arg(long)]
    pub coeffs: Option<PathBuf>,
    /// Topology JSON; the built-in 19-joint skeleton when omitted.
    #[arg(long)]
    pub topology: Option<PathBuf>,
    /// Classes to fit; all classes when omitted.
    #[arg(long)]
    pub class: Vec<String>,
    /// Fit every sequence instead of each class's reference movement.
    #[arg(long)]
    pub per_sequence: bool,
    /// Required for kf.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Starting random-walk variance.
    #[arg(long)]
    pub q: Option<f64>,
    /// Starting observation variance.
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub per_coefficient_q: bool,
    /// Report filtered instead of smoothed trajectories.
    #[arg(long)]
    pub filter_only: bool,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Motion CSV whose first two frames start the rollout.
    #[arg(long)]
    pub seed_frames: PathBuf,
    /// Frames to produce, seeds included; the seed file's length when omitted.
    #[arg(long)]
    pub length: Option<usize>,
    /// Output CSV; a `.manifest.json` is written beside it.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct MetricsArgs {
    pub generated: PathBuf,
    pub truth: PathBuf,
    #[arg(long)]
    pub topology: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    #[arg(long, required = true)]
    pub model: Vec<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SelectArgs {
    /// One or more exchange files; their significant slots are pooled.
    #[arg(long, required = true)]
    pub model: Vec<PathBuf>,
    #[arg(long, default_value_t = gomkit::analysis::DEFAULT_TOP_K)]
    pub top_k: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ToleranceArgs {
    /// Exchange files of repetitions of one movement.
    #[arg(long, required = true)]
    pub model: Vec<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    pub k_sigma: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RecognizeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub topology: Option<PathBuf>,
    /// Comma-separated joints or channels, or a sensor-set JSON file.
    #[arg(long)]
    pub channels: String,
    #[arg(long, default_value_t = 6)]
    pub states: usize,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ImportArgs {
    pub file: PathBuf,
    /// Require the file to match this topology.
    #[arg(long)]
    pub topology: Option<PathBuf>,
}
