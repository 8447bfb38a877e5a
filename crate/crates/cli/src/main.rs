//! `polyemo`: evaluate emotion predictions, combine models, query chat
//! providers and simulate ensembles, one reproducible command at a time.
//!
//! Exit codes: 0 ok, 1 runtime failure, 2 input error, 3 too many
//! unresolvable ensemble items, 4 missing provider credentials.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polyemo::ingest::DataFormat;

#[derive(Parser, Debug)]
#[command(name = "polyemo", version, about = "Cross-lingual emotion classification ensembles")]
struct Cli {
    /// Format of written label files.
    #[arg(long, global = true, default_value = "tsv")]
    format: DataFormat,
    /// Directory receiving outputs and the run manifest.
    #[arg(long, global = true, default_value = "polyemo-out")]
    out_dir: PathBuf,
    /// Seed for commands that draw random numbers.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Serve provider requests from this mock script instead of the network.
    #[arg(long, global = true)]
    mock: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score prediction files against gold labels.
    Evaluate(EvaluateArgs),
    /// Combine several models' predictions with a voting or routing strategy.
    Ensemble(EnsembleArgs),
    /// Ask a chat-completion provider to label a dataset.
    Predict(PredictArgs),
    /// Compare strategies on synthetic models over many trials.
    Simulate(SimulateArgs),
    /// Render skill-profile and dataset tables.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub gold: PathBuf,
    /// `NAME=PATH`, or `PATH` to name the model after the file stem.
    #[arg(long = "pred", required = true)]
    pub preds: Vec<String>,
    /// Average macro F1 over all six classes instead of those present in gold.
    #[arg(long)]
    pub all_classes: bool,
    /// Also write the skill profile built from these predictions.
    #[arg(long)]
    pub profile: bool,
}

#[derive(Args, Debug)]
pub struct EnsembleArgs {
    /// Dataset to combine predictions for; labels are optional.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long = "pred")]
    pub preds: Vec<String>,
    /// Ensemble configuration file.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub config: Option<PathBuf>,
    /// Shipped configuration name.
    #[arg(long)]
    pub preset: Option<String>,
    /// Skill profile consulted for routing and fallbacks.
    #[arg(long)]
    pub profile: PathBuf,
    /// `CLASS=PATH` YES/NO verdicts for binary decomposition.
    #[arg(long = "verdicts")]
    pub verdicts: Vec<String>,
    /// `NAME=PATH` top-2 predictions (`id`, `label`, `label2`).
    #[arg(long = "ranked")]
    pub ranked: Vec<String>,
    /// Overrides the configured unresolved-item tolerance.
    #[arg(long)]
    pub max_unresolved: Option<f64>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Provider configuration file.
    #[arg(long)]
    pub provider: PathBuf,
    /// classify, binary:<Emotion>, language or translate.
    #[arg(long, default_value = "classify")]
    pub task: polyemo::provider::Task,
    /// Batch log; reruns with the same log resume where they stopped.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub max_concurrency: Option<usize>,
    /// Fail when more than this fraction of items end in error.
    #[arg(long, default_value_t = 1.0)]
    pub max_error_fraction: f64,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// JSON array of preset names and/or ensemble configurations.
    #[arg(long, required_unless_present = "preset")]
    pub strategies: Option<PathBuf>,
    #[arg(long)]
    pub preset: Vec<String>,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long, required_unless_present = "dataset")]
    pub profile: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Vec<PathBuf>,
    /// Column order for profile tables.
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<String>,
}

/// Global flags shared by every command.
pub struct Globals {
    pub format: DataFormat,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub mock: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let globals = Globals {
        format: cli.format,
        out_dir: cli.out_dir,
        seed: cli.seed,
        mock: cli.mock,
    };
    let result = match cli.command {
        Command::Evaluate(a) => commands::evaluate(&globals, a),
        Command::Ensemble(a) => commands::ensemble(&globals, a),
        Command::Predict(a) => commands::predict(&globals, a),
        Command::Simulate(a) => commands::simulate(&globals, a),
        Command::Report(a) => commands::report(&globals, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
