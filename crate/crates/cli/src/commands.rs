use std::path::Path;

use anyhow::{Context, Result};
use pgpo_core::dump::{parse_dump, score_records, write_dump, DumpRecord};
use pgpo_core::verification::run_suite;
use pgpo_core::{write_checkpoint, ReshapeMode, StepMetrics, TrainAbort, TrainConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::{metrics_table, rows_table, OutputDir};

/// Outcome of one training run, one row of `summary`.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub mode: String,
    pub seed: u64,
    pub status: String,
    pub steps_completed: usize,
    pub initial_accuracy: f64,
    pub final_accuracy: f64,
    pub final_mean_dependency: f64,
}

impl RunSummary {
    const COLUMNS: [&'static str; 7] = [
        "mode",
        "seed",
        "status",
        "steps_completed",
        "initial_accuracy",
        "final_accuracy",
        "final_mean_dependency",
    ];

    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.mode,
            self.seed,
            self.status,
            self.steps_completed,
            self.initial_accuracy,
            self.final_accuracy,
            self.final_mean_dependency
        )
    }

    fn new(mode: ReshapeMode, seed: u64, status: &str, metrics: &[StepMetrics]) -> Self {
        let first = metrics.first();
        let last = metrics.last();
        Self {
            mode: mode.to_string(),
            seed,
            status: status.to_string(),
            steps_completed: metrics.len().saturating_sub(1),
            initial_accuracy: first.map_or(f64::NAN, |m| m.accuracy),
            final_accuracy: last.map_or(f64::NAN, |m| m.accuracy),
            final_mean_dependency: last.map_or(f64::NAN, |m| m.mean_dependency),
        }
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("cannot start worker pool")
}

fn run_dir(mode: ReshapeMode, seed: u64) -> String {
    format!("{mode}/seed-{seed}")
}

fn train_one(cfg: &RunConfig, out: &OutputDir, mode: ReshapeMode, seed: u64) -> Result<RunSummary> {
    let train_cfg = TrainConfig {
        reshape: cfg.train.reshape.with_mode(mode),
        ..cfg.train.clone()
    };
    let dir = run_dir(mode, seed);
    let metrics_file = format!("{dir}/metrics.{}", cfg.format.extension());
    let header = |step: usize| {
        vec![
            ("mode", mode.to_string()),
            ("seed", seed.to_string()),
            ("step", step.to_string()),
        ]
    };
    match pgpo_core::train(&train_cfg, &cfg.shape, seed) {
        Ok(outcome) => {
            out.write(&metrics_file, &metrics_table(&outcome.metrics, cfg.format)?)?;
            let mut ckpt = Vec::new();
            write_checkpoint(&mut ckpt, &outcome.params, &header(train_cfg.steps))?;
            out.write(format!("{dir}/checkpoint.txt"), &String::from_utf8(ckpt)?)?;
            Ok(RunSummary::new(mode, seed, "ok", &outcome.metrics))
        }
        Err(abort) => {
            let TrainAbort {
                error,
                step,
                metrics,
                params,
            } = abort;
            out.write(&metrics_file, &metrics_table(&metrics, cfg.format)?)?;
            let mut ckpt = Vec::new();
            write_checkpoint(&mut ckpt, &params, &header(step))?;
            out.write(format!("{dir}/checkpoint.txt"), &String::from_utf8(ckpt)?)?;
            out.write(
                format!("{dir}/abort.txt"),
                &format!(
                    "step = {step}\ncategory = {}\nerror = {error}\nparams_finite = {}\n",
                    error.category(),
                    params.is_finite()
                ),
            )?;
            Ok(RunSummary::new(mode, seed, "aborted", &metrics))
        }
    }
}

fn train_runs(cfg: &RunConfig, out: &OutputDir, modes: &[ReshapeMode]) -> Result<Vec<RunSummary>> {
    let jobs: Vec<(ReshapeMode, u64)> = modes
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let summaries = pool(cfg.jobs)?.install(|| {
        jobs.par_iter()
            .map(|&(mode, seed)| train_one(cfg, out, mode, seed))
            .collect::<Result<Vec<_>>>()
    })?;
    let table = rows_table(&RunSummary::COLUMNS, &summaries, RunSummary::csv, cfg.format)?;
    out.write(format!("summary.{}", cfg.format.extension()), &table)?;
    for s in &summaries {
        println!(
            "{} seed {}: {} accuracy {:.4} -> {:.4}",
            s.mode, s.seed, s.status, s.initial_accuracy, s.final_accuracy
        );
    }
    if let Some(bad) = summaries.iter().find(|s| s.status != "ok") {
        let reason = format!("run {} seed {} aborted; see its abort.txt", bad.mode, bad.seed);
        out.mark_failed(&reason);
        eprintln!("error: {reason}");
    }
    Ok(summaries)
}

/// Trains every configured mode over every seed.
pub fn train(cfg: &RunConfig, out: &OutputDir) -> Result<bool> {
    let summaries = train_runs(cfg, out, &cfg.modes)?;
    Ok(summaries.iter().all(|s| s.status == "ok"))
}

#[derive(Debug, Clone, Serialize)]
struct ComparisonRow {
    mode: String,
    runs: usize,
    mean_initial_accuracy: f64,
    mean_final_accuracy: f64,
    mean_final_dependency: f64,
}

/// All five reshape modes over the configured seeds plus a comparison table.
pub fn ablate(cfg: &RunConfig, out: &OutputDir) -> Result<bool> {
    let summaries = train_runs(cfg, out, &ReshapeMode::ALL)?;
    let rows: Vec<ComparisonRow> = ReshapeMode::ALL
        .iter()
        .map(|mode| {
            let runs: Vec<&RunSummary> = summaries.iter().filter(|s| s.mode == mode.as_str()).collect();
            let mean = |f: fn(&RunSummary) -> f64| runs.iter().map(|r| f(r)).sum::<f64>() / runs.len() as f64;
            ComparisonRow {
                mode: mode.to_string(),
                runs: runs.len(),
                mean_initial_accuracy: mean(|r| r.initial_accuracy),
                mean_final_accuracy: mean(|r| r.final_accuracy),
                mean_final_dependency: mean(|r| r.final_mean_dependency),
            }
        })
        .collect();
    let table = rows_table(
        &["mode", "runs", "mean_initial_accuracy", "mean_final_accuracy", "mean_final_dependency"],
        &rows,
        |r| {
            format!(
                "{},{},{},{},{}",
                r.mode, r.runs, r.mean_initial_accuracy, r.mean_final_accuracy, r.mean_final_dependency
            )
        },
        cfg.format,
    )?;
    out.write(format!("comparison.{}", cfg.format.extension()), &table)?;
    println!("{:<16} {:>5} {:>10} {:>10} {:>10}", "mode", "runs", "init_acc", "final_acc", "final_S");
    for r in &rows {
        println!(
            "{:<16} {:>5} {:>10.4} {:>10.4} {:>10.4}",
            r.mode, r.runs, r.mean_initial_accuracy, r.mean_final_accuracy, r.mean_final_dependency
        );
    }
    Ok(summaries.iter().all(|s| s.status == "ok"))
}

/// Runs every verification check with the first seed; `true` when all pass.
pub fn verify(cfg: &RunConfig, out: &OutputDir) -> Result<bool> {
    let seed = cfg.seeds[0];
    let outcomes = pool(cfg.jobs)?.install(|| run_suite(&cfg.verify, seed, &cfg.train, &cfg.shape))?;
    let mut summary = String::new();
    for o in &outcomes {
        out.write(format!("reports/{}.txt", o.name), &o.to_record())?;
        let line = o.summary_line();
        println!("{line}");
        summary.push_str(&line);
        summary.push('\n');
    }
    let passed = outcomes.iter().all(|o| o.passed);
    summary.push_str(&format!("overall = {}\n", if passed { "pass" } else { "fail" }));
    out.write("summary.txt", &summary)?;
    Ok(passed)
}

#[derive(Debug, Clone, Serialize)]
struct TokenRow {
    group: usize,
    traj: usize,
    position: usize,
    token: usize,
    raw: f64,
    damped: f64,
    normalized: f64,
    weight: f64,
    advantage: f64,
}

fn token_rows(records: &[DumpRecord]) -> Vec<TokenRow> {
    let mut rows = Vec::new();
    for r in records {
        let (Some(raw), Some(damped), Some(normalized), Some(weights), Some(adv)) =
            (&r.raw, &r.damped, &r.normalized, &r.weights, &r.advantages)
        else {
            continue;
        };
        for (t, &token) in r.tokens.iter().enumerate() {
            rows.push(TokenRow {
                group: r.group,
                traj: r.traj,
                position: t,
                token,
                raw: raw[t],
                damped: damped[t],
                normalized: normalized[t],
                weight: weights[t],
                advantage: adv[t],
            });
        }
    }
    rows
}

/// Scores a trajectory dump with the configured reshape settings.
pub fn score(cfg: &RunConfig, out: &OutputDir, input: &Path) -> Result<bool> {
    let file = std::fs::File::open(input).with_context(|| format!("cannot open {}", input.display()))?;
    let records = parse_dump(std::io::BufReader::new(file)).with_context(|| format!("in {}", input.display()))?;
    let mode = cfg.modes[0];
    let scored = score_records(&records, &cfg.train.reshape.with_mode(mode))?;
    out.write("scored.txt", &write_dump(&scored))?;
    let rows = token_rows(&scored);
    let table = rows_table(
        &["group", "traj", "position", "token", "raw", "damped", "normalized", "weight", "advantage"],
        &rows,
        |r| {
            format!(
                "{},{},{},{},{},{},{},{},{}",
                r.group, r.traj, r.position, r.token, r.raw, r.damped, r.normalized, r.weight, r.advantage
            )
        },
        cfg.format,
    )?;
    out.write(format!("scores.{}", cfg.format.extension()), &table)?;
    println!("scored {} trajectories ({} tokens) in mode {mode}", scored.len(), rows.len());
    Ok(true)
}
