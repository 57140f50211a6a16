//! Output directories, failure markers and tabular writers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pgpo_core::StepMetrics;
use serde::Serialize;

use crate::config::Format;

/// A command-line or configuration mistake; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Name of the marker written when a run fails part way.
pub const FAILED_MARKER: &str = "FAILED";

pub const METRIC_COLUMNS: [&str; 6] = ["step", "accuracy", "entropy", "mean_dependency", "loss", "grad_norm"];

#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    /// Creates `root`, refusing a non-empty directory unless `overwrite`,
    /// in which case its previous contents are removed.
    pub fn prepare(root: &Path, overwrite: bool) -> Result<Self> {
        if root.exists() {
            if !root.is_dir() {
                return Err(UsageError(format!("output path {} is not a directory", root.display())).into());
            }
            let non_empty = std::fs::read_dir(root)
                .with_context(|| format!("cannot list {}", root.display()))?
                .next()
                .is_some();
            if non_empty {
                if !overwrite {
                    return Err(UsageError(format!(
                        "output directory {} is not empty; pass --overwrite to replace it",
                        root.display()
                    ))
                    .into());
                }
                std::fs::remove_dir_all(root).with_context(|| format!("cannot clear {}", root.display()))?;
            }
        }
        std::fs::create_dir_all(root).with_context(|| format!("cannot create {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn write(&self, rel: impl AsRef<Path>, contents: &str) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
        }
        std::fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    pub fn mark_failed(&self, reason: &str) {
        // Best effort: the original error is reported either way.
        let _ = self.write(FAILED_MARKER, &format!("{reason}\n"));
    }
}

pub fn metrics_table(metrics: &[StepMetrics], format: Format) -> Result<String> {
    let mut out = String::new();
    match format {
        Format::Csv => {
            out.push_str(&METRIC_COLUMNS.join(","));
            out.push('\n');
            for m in metrics {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    m.step, m.accuracy, m.entropy, m.mean_dependency, m.loss, m.grad_norm
                );
            }
        }
        Format::Jsonlines => {
            for m in metrics {
                out.push_str(&serde_json::to_string(m)?);
                out.push('\n');
            }
        }
    }
    Ok(out)
}

/// Rows of named columns, written as CSV or JSON lines.
pub fn rows_table<R: Serialize>(columns: &[&str], rows: &[R], csv_row: impl Fn(&R) -> String, format: Format) -> Result<String> {
    let mut out = String::new();
    match format {
        Format::Csv => {
            out.push_str(&columns.join(","));
            out.push('\n');
            for r in rows {
                out.push_str(&csv_row(r));
                out.push('\n');
            }
        }
        Format::Jsonlines => {
            for r in rows {
                out.push_str(&serde_json::to_string(r)?);
                out.push('\n');
            }
        }
    }
    Ok(out)
}
