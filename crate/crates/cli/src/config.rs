//! Run configuration: built-in defaults, overridden by a TOML file, overridden
//! by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pgpo_core::verification::SuiteSizes;
use pgpo_core::{ReshapeMode, TaskShape, TrainConfig};
use serde::{Deserialize, Serialize};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "PGPO_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Jsonlines,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Jsonlines => "jsonl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    /// Reshape modes for `train`; `ablate` always runs all five.
    pub modes: Vec<ReshapeMode>,
    pub format: Format,
    pub output_dir: Option<PathBuf>,
    /// Worker threads for the per-seed pool; 0 uses every core.
    pub jobs: usize,
    pub shape: TaskShape,
    /// Training settings; `[train.reshape]` holds the advantage reshaping.
    pub train: TrainConfig,
    pub verify: SuiteSizes,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0],
            modes: vec![ReshapeMode::Full],
            format: Format::Csv,
            output_dir: None,
            jobs: 0,
            shape: TaskShape::default(),
            train: TrainConfig::default(),
            verify: SuiteSizes::default(),
        }
    }
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub modes: Vec<ReshapeMode>,
    pub tau: Option<f64>,
    pub beta: Option<f64>,
    pub epsilon: Option<f64>,
    pub group_size: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub steps: Option<usize>,
    pub learning_rate: Option<f64>,
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).context("invalid config")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("cannot serialize effective config")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if !o.modes.is_empty() {
            self.modes = o.modes.clone();
        }
        let reshape = &mut self.train.reshape;
        if let Some(v) = o.tau {
            reshape.tau = v;
        }
        if let Some(v) = o.beta {
            reshape.beta = v;
        }
        if let Some(v) = o.epsilon {
            reshape.epsilon = v;
        }
        if let Some(v) = o.group_size {
            self.train.group_size = v;
        }
        if let Some(v) = &o.seeds {
            self.seeds = v.clone();
        }
        if let Some(v) = &o.out {
            self.output_dir = Some(v.clone());
        }
        if let Some(v) = o.format {
            self.format = v;
        }
        if let Some(v) = o.steps {
            self.train.steps = v;
        }
        if let Some(v) = o.learning_rate {
            self.train.learning_rate = v;
        }
        if let Some(v) = o.jobs {
            self.jobs = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds: at least one seed is required");
        }
        if self.modes.is_empty() {
            bail!("modes: at least one mode is required");
        }
        self.shape.validate().context("shape")?;
        self.train.validate().context("train")?;
        self.train.reshape.validate().context("train.reshape")?;
        Ok(())
    }

    /// `--out`, then the file's `output_dir`, then `$PGPO_OUTPUT_ROOT/<command>`,
    /// then `runs/<command>`.
    pub fn resolve_output(&self, command: &str) -> PathBuf {
        if let Some(dir) = &self.output_dir {
            return dir.clone();
        }
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if !root.is_empty() => PathBuf::from(root).join(command),
            _ => PathBuf::from("runs").join(command),
        }
    }
}

/// Parses `3`, `1,4,9` or a half-open range `0..20`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, String> {
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.parse().map_err(|_| format!("bad range start in `{part}`"))?;
            let b: u64 = b.parse().map_err(|_| format!("bad range end in `{part}`"))?;
            if b <= a {
                return Err(format!("empty range `{part}`"));
            }
            seeds.extend(a..b);
        } else {
            seeds.push(part.parse().map_err(|_| format!("bad seed `{part}`"))?);
        }
    }
    if seeds.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn precedence_is_defaults_then_file_then_flags() {
        let mut cfg = RunConfig::from_toml("seeds = [4, 5]\n[train]\nsteps = 7\n[train.reshape]\ntau = 0.3\nbeta = 1.0\n").unwrap();
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.train.reshape.tau, 0.3);
        assert_eq!(cfg.train.clip_high, 0.28);
        cfg.apply(&Overrides {
            tau: Some(0.5),
            seeds: Some(vec![9]),
            ..Overrides::default()
        });
        assert_eq!(cfg.train.reshape.tau, 0.5);
        assert_eq!(cfg.train.reshape.beta, 1.0);
        assert_eq!(cfg.seeds, vec![9]);
    }

    #[test]
    fn unknown_fields_are_named() {
        let err = RunConfig::from_toml("[train]\nlearning_rat = 0.1\n").unwrap_err();
        assert!(format!("{err:#}").contains("learning_rat"));
    }

    #[test]
    fn validation_names_the_field() {
        let mut cfg = RunConfig::default();
        cfg.train.reshape.tau = 1.5;
        assert!(format!("{:#}", cfg.validate().unwrap_err()).contains("tau"));
        cfg = RunConfig {
            seeds: vec![],
            ..RunConfig::default()
        };
        assert!(format!("{:#}", cfg.validate().unwrap_err()).contains("seeds"));
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("3").unwrap(), vec![3]);
        assert_eq!(parse_seeds("1,4, 9").unwrap(), vec![1, 4, 9]);
        assert_eq!(parse_seeds("0..3,7").unwrap(), vec![0, 1, 2, 7]);
        assert!(parse_seeds("5..5").is_err());
        assert!(parse_seeds("x").is_err());
        assert!(parse_seeds("").is_err());
    }
}
