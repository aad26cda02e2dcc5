//! `rml`: generate synthetic data, corrupt labels, train the two-phase
//! noise-robust model, evaluate checkpoints, and sweep hyperparameters.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, bad config, bad
//! data), 2 runtime failure (I/O, numeric divergence).

mod commands;
mod config;

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "rml", version, about = "Noise-robust training experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic dataset (blobs or rings) as CSV.
    Generate {
        /// Experiment config file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Root seed, overriding the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Corrupt the labels of a dataset CSV per the config's noise section.
    Inject {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Input dataset CSV.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path (noisy_label column filled).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline: data, split, noise, two-phase training.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for metrics.csv, checkpoints, and eval.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint against a dataset CSV's clean labels.
    Eval {
        /// Model checkpoint to load.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset CSV to evaluate on.
        #[arg(long)]
        input: PathBuf,
        /// Report CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train across a parameter grid and several seeds; long-form results.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Which parameter to sweep: q | alpha | rho | weighting.
        #[arg(long)]
        param: String,
        /// Comma-separated grid values, e.g. `0,0.25,0.5`.
        #[arg(long)]
        grid: String,
        /// Number of seeds per grid point (root, root+1, ...).
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Results CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> rml_core::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(cli: Cli) -> rml_core::Result<()> {
    match cli.cmd {
        Cmd::Generate { config, seed, out } => {
            let cfg = load_config(&config)?;
            let root = seed.unwrap_or(cfg.seed);
            commands::cmd_generate(&cfg, root, &out)
        }
        Cmd::Inject { config, input, seed, out } => {
            let cfg = load_config(&config)?;
            let root = seed.unwrap_or(cfg.seed);
            commands::cmd_inject(&cfg, root, &input, &out)
        }
        Cmd::Train { config, seed, out } => {
            let cfg = load_config(&config)?;
            let root = seed.unwrap_or(cfg.seed);
            commands::cmd_train(&cfg, root, &out)
        }
        Cmd::Eval { checkpoint, input, out } => commands::cmd_eval(&checkpoint, &input, out.as_deref()),
        Cmd::Sweep { config, param, grid, seeds, seed, out } => {
            let cfg = load_config(&config)?;
            let root = seed.unwrap_or(cfg.seed);
            commands::cmd_sweep(&cfg, root, &param, &grid, seeds, &out)
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e);
        std::process::exit(if e.is_validation() { 1 } else { 2 });
    }
}
