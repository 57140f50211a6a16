//! `pgpo`: training, verification, ablation and batch scoring runs.
//!
//! Settings are resolved as built-in defaults, then the `--config` TOML file,
//! then command-line flags. Every run writes `effective_config.toml` into its
//! output directory; passing that file back with `--config` reproduces the run.
//!
//! Exit status: 0 success, 1 run or check failure, 2 usage or config error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use pgpo_core::ReshapeMode;

use config::{parse_seeds, Format, Overrides, RunConfig};
use output::{OutputDir, UsageError};

#[derive(Debug, Parser)]
#[command(name = "pgpo", version, about = "Perception-weighted token credit assignment experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Reshape mode; repeat for several paired runs.
    #[arg(long = "mode", global = true)]
    modes: Vec<ReshapeMode>,

    /// Gate threshold, strictly between 0 and 1.
    #[arg(long, global = true)]
    tau: Option<f64>,

    /// Boost slope above the threshold.
    #[arg(long, global = true)]
    beta: Option<f64>,

    /// Normalization and gate epsilon.
    #[arg(long, global = true)]
    epsilon: Option<f64>,

    /// Rollouts per prompt.
    #[arg(long, global = true)]
    group_size: Option<usize>,

    /// Seeds: `3`, `1,4,9` or `0..20`.
    #[arg(long, global = true, value_parser = parse_seed_list)]
    seeds: Option<SeedList>,

    /// Output directory [default: $PGPO_OUTPUT_ROOT/<command> or runs/<command>].
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Format of metric and table files.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Replace a non-empty output directory.
    #[arg(long, global = true)]
    overwrite: bool,

    /// Rollout and update rounds per run.
    #[arg(long, global = true)]
    steps: Option<usize>,

    /// Gradient-ascent step size.
    #[arg(long, global = true)]
    learning_rate: Option<f64>,

    /// Worker threads for parallel runs (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

/// Parsed `--seeds` value.
#[derive(Debug, Clone)]
struct SeedList(Vec<u64>);

fn parse_seed_list(text: &str) -> Result<SeedList, String> {
    parse_seeds(text).map(SeedList)
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one run per mode and seed.
    Train,
    /// Run the oracle and property checks.
    Verify,
    /// Train all five reshape modes and compare them.
    Ablate,
    /// Score a trajectory dump.
    Score {
        /// Trajectory dump, one `key=value` record per line.
        #[arg(long)]
        input: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Verify => "verify",
            Command::Ablate => "ablate",
            Command::Score { .. } => "score",
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        modes: cli.modes.clone(),
        tau: cli.tau,
        beta: cli.beta,
        epsilon: cli.epsilon,
        group_size: cli.group_size,
        seeds: cli.seeds.as_ref().map(|s| s.0.clone()),
        out: cli.out.clone(),
        format: cli.format,
        steps: cli.steps,
        learning_rate: cli.learning_rate,
        jobs: cli.jobs,
    });
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = resolve(&cli).map_err(|e| UsageError(format!("{e:#}")))?;
    let out = OutputDir::prepare(&cfg.resolve_output(cli.command.name()), cli.overwrite)?;
    out.write("effective_config.toml", &cfg.to_toml()?)?;
    let result = match &cli.command {
        Command::Train => commands::train(&cfg, &out),
        Command::Verify => commands::verify(&cfg, &out),
        Command::Ablate => commands::ablate(&cfg, &out),
        Command::Score { input } => commands::score(&cfg, &out, input),
    };
    if let Err(e) = &result {
        out.mark_failed(&format!("{e:#}"));
    }
    result
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
