//! `basen`: synthesize a corpus, preprocess it, train BASEN and the channel selectors,
//! extract subsets, evaluate checkpoints and render reports.
//!
//! Configuration precedence, lowest to highest: built-in defaults (paths below
//! `$BASEN_RUN_ROOT` when set), the `--config` JSON document, `--set key=value` pairs, then
//! the dedicated flags `--seed` and `--run-dir`.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use basen_core::config::RunConfig;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::json;

pub const RUN_ROOT_ENV: &str = "BASEN_RUN_ROOT";

#[derive(Parser, Debug)]
#[command(name = "basen", version, about = "Brain-assisted speech enhancement with EEG channel selection")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// JSON config document; unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.schedule.max_lr=0.005` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Seed for both corpus synthesis and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `paths.run_dir`.
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic corpus into `paths.data_dir`.
    Synth,
    /// Filter, MUA-transform and segment `paths.data_dir` into `paths.preprocessed_dir`.
    Preprocess,
    /// Train on `paths.preprocessed_dir`; artifacts go to `<run_dir>/<method>`.
    Train(TrainArgs),
    /// Print the channel subset of a finished run and store it as `selection.json`.
    Select(SelectArgs),
    /// Evaluate a checkpoint on a dataset and print the summary JSON.
    Eval(EvalArgs),
    /// Write channel maps, evaluation and metric summaries under `<run>/report`.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Basen,
    Resgs,
    Convrs,
    Gcs,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Basen => "basen",
            Method::Resgs => "resgs",
            Method::Convrs => "convrs",
            Method::Gcs => "gcs",
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(value_enum)]
    pub method: Method,
    /// Pretrained BASEN checkpoint for `resgs`; trained first when absent.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    /// Run directory of a selection method.
    #[arg(long)]
    pub run: PathBuf,
    /// ConvRS sparsity weight to pick; defaults to the largest with a non-empty subset.
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset directory; defaults to `paths.preprocessed_dir`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Channel subset JSON (a subset object or a plain index list); other channels are zeroed.
    #[arg(long)]
    pub subset: Option<PathBuf>,
    /// Write the summary here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub run: PathBuf,
}

fn key_listing() -> String {
    let keys = RunConfig::default_keys();
    let width = keys.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::from("Config keys (defaults):\n");
    for (k, v) in keys {
        s.push_str(&format!("  {k:width$}  {v}\n"));
    }
    s.push_str(&format!(
        "\nPrecedence: defaults < ${RUN_ROOT_ENV} (path defaults) < --config < --set < --seed/--run-dir."
    ));
    s
}

fn main() -> ExitCode {
    let matches = Cli::command().after_long_help(key_listing()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = if cli.global.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let keys = match &e {
                basen_core::Error::Config(k) => k.clone(),
                _ => Vec::new(),
            };
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string(), "keys": keys}));
            ExitCode::from(if matches!(e, basen_core::Error::Config(_)) { 2 } else { 1 })
        }
    }
}
