use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};
use riskseq_core::model::Phase;

#[derive(Debug, Parser)]
#[command(name = "riskseq", version, about = "Perioperative multi-task risk models: synthesize, train, evaluate, explain")]
pub struct Cli {
    /// Log progress at info level (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort with known generating logits.
    Synth(SynthArgs),
    /// Fit preprocessing on the development split and train a network.
    Train(TrainArgs),
    /// Score a trained model or baseline and write metrics with bootstrap intervals.
    Evaluate(EvaluateArgs),
    /// Net reclassification improvement of one prediction file over another.
    Nri(NriArgs),
    /// Integrated-gradients attributions of a postoperative model.
    Attribute(AttributeArgs),
    /// Fit the class-weighted logistic regression baseline.
    Baseline(BaselineArgs),
    /// Print the manifest of a checkpoint.
    Inspect(InspectArgs),
    /// Run the phase x task-mode grid of deep models and baselines and write a comparison report.
    Reproduce(ReproduceArgs),
    /// Re-execute the command recorded in a run manifest and verify its outputs are identical.
    Rerun(RerunArgs),
}

/// Where the development/validation boundary lies.
#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    /// Latest fraction of encounters (by admission time) held out for validation.
    #[arg(long, default_value_t = 0.2, conflicts_with = "cutoff")]
    pub validation_fraction: f64,
    /// Explicit cutoff timestamp (YYYY-MM-DDTHH:MM:SS); encounters at or after it are validation.
    #[arg(long)]
    pub cutoff: Option<String>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").args(["spec", "preset"])))]
pub struct SynthArgs {
    /// Synthetic spec in TOML.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Named recipe (default, null, nonlinear, correlated_rare, missingness).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the spec's encounter count.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Cohort directory (schema.json, static.csv, series.csv, outcomes.csv).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub phase: Phase,
    /// `multitask` or `single:OUTCOME`.
    #[arg(long, default_value = "multitask")]
    pub task_mode: String,
    /// Training configuration in TOML; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint path; preprocessor.json, history.json and split.json go beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitName {
    Development,
    Validation,
    All,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint (model.ckpt) or baseline (baseline.json) with preprocessor.json beside it.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitName::Validation)]
    pub split: SplitName,
    /// Bootstrap resamples; 0 reports point estimates only.
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model name in the report; derived from phase and task mode when omitted.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write per-encounter probabilities as CSV.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NriArgs {
    /// Predictions of the reference model (encounter_id, one probability column per outcome).
    #[arg(long)]
    pub old: PathBuf,
    /// Predictions of the candidate model.
    #[arg(long)]
    pub new: PathBuf,
    /// Labels in outcomes.csv format.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub outcome: String,
    /// Riemann steps along the integration path.
    #[arg(long, default_value_t = riskseq_core::attribution::DEFAULT_STEPS)]
    pub steps: usize,
    #[arg(long, value_enum, default_value_t = SplitName::Validation)]
    pub split: SplitName,
    /// Attribute only the first N encounters of the split.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Rows in ranking.csv.
    #[arg(long, default_value_t = 20)]
    pub top: usize,
    /// Output directory for attributions.csv and ranking.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub phase: Phase,
    /// Baseline configuration in TOML; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model path; preprocessor.json and split.json go beside it.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("grid").args(["all", "phase"]).required(true)))]
pub struct ReproduceArgs {
    /// Every phase.
    #[arg(long)]
    pub all: bool,
    /// Restrict the grid to these phases (repeatable).
    #[arg(long)]
    pub phase: Vec<Phase>,
    /// Experiment configuration in TOML; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use this cohort instead of synthesizing one.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Overrides the configured synthetic cohort size.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    pub manifest: PathBuf,
}
