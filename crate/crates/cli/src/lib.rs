//! Command-line front end: reproducible data generation, training,
//! evaluation, inference, ablations, and schedule inspection.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;

pub use config::RunConfig;

/// An invocation mistake (exit code 2) rather than a runtime failure.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const VARIANT_HELP: &str = "\
Training variants (config key `variant`):
  full                   rationale foundation stage, then joint optimization
                         with the scheduled conditioning swap
  sft                    single-task label prediction, no rationales
  no-stage1              joint stage only, from random init
  no-scheduled-sampling  full recipe with the swap probability pinned to 0
  no-warmup              full recipe with the prediction-loss weight pinned at
                         its maximum from step 0; the swap schedule (including
                         its warm-up window) is unchanged
  dss-style              single-stage multi-task with an unconditioned
                         explanation prompt and fixed equal loss weights

Logging: set R2D_LOG={error,info,debug} (default info, written to stderr).";

#[derive(Parser, Debug)]
#[command(name = "r2d", version, about = "Joint label-prediction and rationale-generation trainer", after_long_help = VARIANT_HELP)]
pub struct Cli {
    /// Run configuration file (TOML or JSON).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Override the config's seed.
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,

    /// Override the config's output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic corpus and write train/val/test JSONL.
    GenData,
    /// Train the configured variant; writes checkpoints and a report.
    Train,
    /// Evaluate a checkpoint on a JSONL file.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
    },
    /// Predict a label and rationale for one input.
    Infer {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "TEXT")]
        input: String,
    },
    /// Train and evaluate every configured (variant, seed) cell.
    Ablate,
    /// Write the (t, pi, alpha) schedule table as CSV.
    ScheduleDump,
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.apply_overrides(cli.seed, cli.out);
    match cli.command {
        Command::GenData => commands::cmd_gen_data(&cfg),
        Command::Train => commands::cmd_train(&cfg).map(|_| ()),
        Command::Evaluate { checkpoint, data } => {
            commands::cmd_evaluate(&cfg, &checkpoint, &data).map(|_| ())
        }
        Command::Infer { checkpoint, input } => commands::cmd_infer(&cfg, &checkpoint, &input),
        Command::Ablate => commands::cmd_ablate(&cfg),
        Command::ScheduleDump => commands::cmd_schedule_dump(&cfg),
    }
}
