//! `spatial-qa`: catalog and dataset generation, training, evaluation,
//! ranking, probing and gradient checks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spatial_qa::train::ModelKind;

/// A bad invocation: exit code 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Debug, Parser)]
#[command(
    name = "spatial-qa",
    version,
    about = "Spatial question answering over synthetic POI catalogs",
    after_help = "Settings are resolved as: command-line flags, then the --config JSON file, then built-in defaults.\n\
                  Exit codes: 0 success, 1 runtime or IO failure, 2 usage error."
)]
pub struct Cli {
    /// JSON file with any subset of the sections catalog, data, spatial, joint, train.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic POI catalog (JSON lines).
    GenCatalog(GenCatalogArgs),
    /// Generate train/dev/test question splits and a stats file.
    GenData(GenDataArgs),
    /// Train a model with max-margin loss and early stopping.
    Train(TrainArgs),
    /// Evaluate a checkpoint or a baseline on a split.
    Eval(EvalArgs),
    /// Print the top-ranked entities for each question of a file.
    Rank(RankArgs),
    /// Dump distance weights at every mention for chosen candidates.
    Probe(ProbeArgs),
    /// Compare autodiff gradients against finite differences.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args)]
pub struct GenCatalogArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Number of cities [default: 50].
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..100_000))]
    pub cities: Option<u64>,
    /// [default: 7]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Smallest city size [default: 10].
    #[arg(long)]
    pub min_size: Option<usize>,
    /// Largest city size [default: 16200].
    #[arg(long)]
    pub max_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// [default: 13]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Add a keyword to every question and restrict gold to matching candidates.
    #[arg(long)]
    pub hybrid: bool,
    /// Train, dev and test sizes [default: 6000,1500,1500].
    #[arg(long, value_parser = parse_sizes)]
    pub sizes: Option<[usize; 3]>,
    /// Stored negatives per question [default: 500].
    #[arg(long)]
    pub negatives: Option<usize>,
    /// Share of hard negatives in the stored pool [default: 0.35].
    #[arg(long)]
    pub hard_frac: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_kind)]
    pub model: ModelKind,
    /// Directory holding train.jsonl and dev.jsonl.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub catalog: PathBuf,
    /// Best checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch metrics [default: <out>.metrics.json].
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Spatial checkpoint to start a joint model from.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Train on the first N training questions only.
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: 30]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Negatives per question per epoch [default: 5].
    #[arg(long)]
    pub negatives: Option<usize>,
    /// [default: 1.0]
    #[arg(long)]
    pub margin: Option<f64>,
    /// [default: 0.35]
    #[arg(long)]
    pub hard_frac: Option<f64>,
    /// Adam learning rate [default: 0.001].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Epochs without dev improvement before stopping [default: 5].
    #[arg(long)]
    pub patience: Option<usize>,
    /// Dev questions used for early stopping, or "all" [default: 500].
    #[arg(long, value_parser = parse_limit)]
    pub dev_limit: Option<Limit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    /// Sort by distance to the nearest mention.
    Sd,
    /// Token overlap only.
    Lexical,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "baseline", conflicts_with = "baseline")]
    pub model_file: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    /// Split file (JSON lines).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub catalog: PathBuf,
    /// JSON report; a text table is written next to it with a .txt suffix.
    #[arg(long)]
    pub out_report: PathBuf,
    /// Per-question outcomes (JSON lines).
    #[arg(long)]
    pub out_outcomes: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub model_file: PathBuf,
    /// Questions (JSON lines).
    #[arg(long)]
    pub question_file: PathBuf,
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Only this question.
    #[arg(long)]
    pub qid: Option<String>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub model_file: PathBuf,
    #[arg(long)]
    pub question_file: PathBuf,
    #[arg(long)]
    pub catalog: PathBuf,
    /// Comma-separated entity ids.
    #[arg(long, value_delimiter = ',', required = true)]
    pub candidates: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Question to probe [default: the first in the file].
    #[arg(long)]
    pub qid: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Dims {
    Tiny,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long, value_enum, default_value_t = Dims::Tiny)]
    pub dims: Dims,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of random instantiations per model kind.
    #[arg(long, default_value_t = 1)]
    pub runs: u64,
    /// Model kinds to check [default: all].
    #[arg(long, value_parser = parse_kind, value_delimiter = ',')]
    pub model: Vec<ModelKind>,
    /// Debug aid: corrupt the tanh derivative to show the check failing.
    #[arg(long)]
    pub corrupt_tanh: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Limit {
    All,
    First(usize),
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse::<ModelKind>().map_err(|e| e.to_string())
}

fn parse_sizes(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("{s:?}: {e}"))?;
    <[usize; 3]>::try_from(parts).map_err(|_| format!("expected three comma-separated sizes, got {s:?}"))
}

fn parse_limit(s: &str) -> Result<Limit, String> {
    if s == "all" {
        return Ok(Limit::All);
    }
    s.parse::<usize>()
        .map(Limit::First)
        .map_err(|_| format!("expected a count or \"all\", got {s:?}"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match commands::run(&cli) {
        Ok(code) => code,
        Err(e) => {
            if e.downcast_ref::<Usage>().is_some() {
                eprintln!("error: {e}");
                ExitCode::from(2)
            } else {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        }
    }
}
