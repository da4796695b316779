//! `ttd`: data generation, training, fine-tuning, evaluation, streaming
//! detection, loss-weight sweeps and attribution from the command line.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 no detection
//! (`stream`, `attribute`), 4 runtime failure.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{CliError, EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "ttd", version, about = "Time-to-departure survival model pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic JSONL dataset.
    GenData(GenDataArgs),
    /// Train a global model; writes checkpoint, history and manifest.
    Train(TrainArgs),
    /// Personalize a trained model on one user's days.
    Finetune(FinetuneArgs),
    /// Score a checkpoint (or the regression baseline) on a data split.
    Eval(EvalArgs),
    /// Replay one day slot by slot and emit detection events as JSON lines.
    Stream(StreamArgs),
    /// Grid over event weight, weekend weight and detection threshold.
    Sweep(SweepArgs),
    /// Integrated-gradients feature scores at the detection step.
    Attribute(AttributeArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output JSONL path.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub days: Option<usize>,
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Delay between the end of the signal ramp and departure.
    #[arg(long)]
    pub cue_lag_minutes: Option<usize>,
    #[arg(long)]
    pub user_prefix: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    Context,
    Dow,
    Time,
    Pe,
    Alpha,
    Gamma,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// TOML file with `[model]` and `[train]` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory; defaults to a config-derived name under $TTD_RUNS_DIR.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for the user split, initialization and batching (default 42).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Components to switch off, e.g. `--ablate context,pe`.
    #[arg(long, value_delimiter = ',')]
    pub ablate: Vec<Ablation>,
    /// Continue from a checkpoint, restoring its optimizer state, split and normalizer.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub user: String,
    /// TOML file with fine-tuning settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Keep the user's latest N days out of adaptation and score them.
    #[arg(long, default_value_t = 0)]
    pub holdout_days: usize,
    #[arg(long)]
    pub k_last_layers: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Detection threshold for the holdout comparison.
    #[arg(long, default_value_t = 0.1)]
    pub threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Mlr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
    Both,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// One threshold or a comma-separated list.
    #[arg(long, default_value = "0.1", value_delimiter = ',')]
    pub threshold: Vec<f64>,
    /// Score the historical-statistics regressor instead of the model.
    #[arg(long)]
    pub baseline: Option<Baseline>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long, value_enum, default_value_t = FormatArg::Both)]
    pub format: FormatArg,
    /// Also write kernel density estimates of predicted and actual times.
    #[arg(long)]
    pub kde: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub run_id: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct SequenceSelector {
    /// JSONL file holding the day(s).
    #[arg(long)]
    pub sequence: PathBuf,
    /// Zero-based position in the file.
    #[arg(long, conflicts_with_all = ["user", "date"])]
    pub index: Option<usize>,
    #[arg(long, requires = "date")]
    pub user: Option<String>,
    #[arg(long, requires = "user")]
    pub date: Option<chrono::NaiveDate>,
    /// The file is already normalized; skip the checkpoint's normalizer.
    #[arg(long)]
    pub normalized: bool,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub select: SequenceSelector,
    #[arg(long, default_value_t = 0.1)]
    pub threshold: f64,
    /// Also emit the survival estimate after every slot.
    #[arg(long)]
    pub emit_curve: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Retrain,
    Reuse,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// TOML file with `omega_e`, `omega_w` and `thresholds` lists.
    #[arg(long)]
    pub axes: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub omega_e: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub omega_w: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = PolicyArg::Retrain)]
    pub policy: PolicyArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub select: SequenceSelector,
    #[arg(long, default_value_t = 0.1)]
    pub threshold: f64,
    /// Attribute at this slot instead of the detected one.
    #[arg(long)]
    pub at: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Riemann steps along the integration path.
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Finetune(a) => commands::finetune(a),
        Command::Eval(a) => commands::eval(a),
        Command::Stream(a) => commands::stream(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Attribute(a) => commands::attribute(a),
    };
    if let Err(e) = result {
        if !matches!(e, CliError::NoDetection(_)) {
            eprintln!("ttd: {e}");
        }
        std::process::exit(e.exit_code());
    }
}
