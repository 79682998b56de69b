//! `duip`: dataset statistics, training, evaluation and single-query
//! recommendation.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use duip_core::data::{LogFormat, SessionPolicy};

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] duip_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(duip_core::Error::Config(_)) => 2,
            CliError::Core(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "duip",
    version,
    about = "Session-based next-item recommendation with LSTM-driven soft prompts"
)]
struct Cli {
    /// Flat `key = value` config file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override any config key (repeatable), applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Interaction log.
    #[arg(long)]
    data: Option<PathBuf>,
    /// `tsv` or `movielens-dat`.
    #[arg(long)]
    format: Option<LogFormat>,
    /// `daily` or `pre-sessionized`.
    #[arg(long)]
    policy: Option<SessionPolicy>,
    /// Optional `item<TAB>category` table.
    #[arg(long)]
    categories: Option<PathBuf>,
    /// Malformed lines to skip before failing.
    #[arg(long)]
    tolerance: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Print dataset statistics as JSON.
    Stats {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train a model; writes the checkpoint and a per-epoch loss log under --out.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Evaluate DUIP and baselines on the test split; writes metrics.csv under --out.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        /// Trained checkpoint; omit for a baselines-only run.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated subset of duip, mostpop, sknn, oracle.
        #[arg(long)]
        models: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the top-k next items for a comma-separated list of item ids.
    Recommend {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        items: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
}

fn apply_data(cfg: &mut RunConfig, d: DataArgs) {
    if let Some(v) = d.data {
        cfg.data = Some(v);
    }
    if let Some(v) = d.format {
        cfg.format = v;
    }
    if let Some(v) = d.policy {
        cfg.policy = v;
    }
    if let Some(v) = d.categories {
        cfg.categories = Some(v);
    }
    if let Some(v) = d.tolerance {
        cfg.tolerance = v;
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("DUIP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("DUIP_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    cfg.apply_pairs(&cli.set)?;
    match cli.command {
        Command::Stats { data } => {
            apply_data(&mut cfg, data);
            commands::stats(&cfg)
        }
        Command::Train {
            data,
            out,
            seed,
            epochs,
            batch_size,
            learning_rate,
        } => {
            apply_data(&mut cfg, data);
            if let Some(v) = out {
                cfg.out = v;
            }
            let t = &mut cfg.train;
            t.seed = seed.unwrap_or(t.seed);
            t.epochs = epochs.unwrap_or(t.epochs);
            t.batch_size = batch_size.unwrap_or(t.batch_size);
            t.learning_rate = learning_rate.unwrap_or(t.learning_rate);
            commands::train(&cfg)
        }
        Command::Evaluate {
            data,
            checkpoint,
            models,
            out,
        } => {
            apply_data(&mut cfg, data);
            if let Some(v) = out {
                cfg.out = v;
            }
            if let Some(m) = models {
                cfg.set("models", &m)?;
            }
            commands::evaluate(&cfg, checkpoint.as_deref())
        }
        Command::Recommend { checkpoint, items, k } => commands::recommend(&checkpoint, &items, k),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
