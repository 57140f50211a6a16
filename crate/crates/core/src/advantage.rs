//! Group-normalized advantages and threshold-gated, sum-preserving token
//! reshaping.

use serde::{Deserialize, Serialize};

use crate::dependency::DependencyTrace;
use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.4;
pub const DEFAULT_BETA: f64 = 2.0;
/// Stability constant shared by min-max normalization and the gate.
pub const DEFAULT_EPSILON: f64 = 1e-6;
/// Added to the population std in group normalization.
pub const DEFAULT_EPSILON_STD: f64 = 1e-8;
/// Below this total base weight the uniform fallback is used.
pub const DEFAULT_EPSILON_SUM: f64 = 1e-9;

/// Advantage modulation variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReshapeMode {
    /// Gate with the configured threshold, then sum-preserving normalization.
    #[default]
    Full,
    /// Gate evaluated with threshold 1: every token is attenuated.
    SuppressionOnly,
    /// Gate evaluated with threshold 0: every token is boosted.
    BoostingOnly,
    /// Gate without sum-preserving normalization.
    NoNorm,
    /// Sequence advantage broadcast to every token (vanilla GRPO).
    Uniform,
}

impl ReshapeMode {
    pub const ALL: [ReshapeMode; 5] = [
        ReshapeMode::Full,
        ReshapeMode::SuppressionOnly,
        ReshapeMode::BoostingOnly,
        ReshapeMode::NoNorm,
        ReshapeMode::Uniform,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReshapeMode::Full => "full",
            ReshapeMode::SuppressionOnly => "suppression_only",
            ReshapeMode::BoostingOnly => "boosting_only",
            ReshapeMode::NoNorm => "no_norm",
            ReshapeMode::Uniform => "uniform",
        }
    }

    /// Whether the reshaped weights are rescaled to sum to the sequence length.
    pub fn preserves_sum(self) -> bool {
        !matches!(self, ReshapeMode::NoNorm)
    }
}

impl std::fmt::Display for ReshapeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ReshapeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ReshapeMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::domain(format!("unknown reshape mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReshapeConfig {
    pub tau: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub mode: ReshapeMode,
}

impl Default for ReshapeConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            beta: DEFAULT_BETA,
            epsilon: DEFAULT_EPSILON,
            mode: ReshapeMode::Full,
        }
    }
}

impl ReshapeConfig {
    pub fn with_mode(mut self, mode: ReshapeMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::domain(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::domain(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::domain(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Threshold actually used by the gate for this mode.
    pub fn effective_tau(&self) -> f64 {
        match self.mode {
            ReshapeMode::SuppressionOnly => 1.0,
            ReshapeMode::BoostingOnly => 0.0,
            _ => self.tau,
        }
    }
}

/// Sequence-level advantages of one rollout group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAdvantages {
    pub values: Vec<f64>,
    /// All rewards identical; the group carries no learning signal.
    pub degenerate: bool,
}

/// `A_i = (R_i − mean) / (std + ε_std)` with the population std.
pub fn group_normalize(rewards: &[f64], epsilon_std: f64) -> Result<GroupAdvantages> {
    if rewards.len() < 2 {
        return Err(Error::structural(format!(
            "group normalization needs at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(Error::NonFinite(format!("reward {r}")));
    }
    if rewards.iter().all(|r| *r == rewards[0]) {
        return Ok(GroupAdvantages {
            values: vec![0.0; rewards.len()],
            degenerate: true,
        });
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let centered: Vec<f64> = rewards.iter().map(|r| r - mean).collect();
    // Second pass removes the rounding left in `mean`.
    let drift = centered.iter().sum::<f64>() / n;
    let centered: Vec<f64> = centered.into_iter().map(|c| c - drift).collect();
    let std = (centered.iter().map(|c| c * c).sum::<f64>() / n).sqrt();
    let denom = std + epsilon_std;
    Ok(GroupAdvantages {
        values: centered.into_iter().map(|c| c / denom).collect(),
        degenerate: false,
    })
}

/// Piecewise base weight for an arbitrary threshold in `[0, 1]`.
///
/// Below `tau` the weight rises linearly from 0 to just under 1; from `tau`
/// upward it starts at exactly 1 and rises with slope `beta / (1 − tau + ε)`.
pub fn base_weight(i: f64, tau: f64, beta: f64, epsilon: f64) -> f64 {
    if i < tau {
        i / (tau + epsilon)
    } else {
        1.0 + beta * (i - tau) / (1.0 - tau + epsilon)
    }
}

/// Base weight of a normalized dependency score under `cfg`.
pub fn gate(i: f64, cfg: &ReshapeConfig) -> Result<f64> {
    if !(0.0..=1.0).contains(&i) {
        return Err(Error::domain(format!("dependency score {i} outside [0, 1]")));
    }
    Ok(match cfg.mode {
        ReshapeMode::Uniform => 1.0,
        _ => base_weight(i, cfg.effective_tau(), cfg.beta, cfg.epsilon),
    })
}

/// Output of [`sum_preserve`].
#[derive(Debug, Clone, PartialEq)]
pub struct SumPreserved {
    pub weights: Vec<f64>,
    /// The base weights had (near) zero mass and the uniform fallback was used.
    pub fallback: bool,
}

/// Rescales `base` so it sums to its length.
pub fn sum_preserve(base: &[f64], epsilon_sum: f64) -> Result<SumPreserved> {
    if base.is_empty() {
        return Err(Error::structural("cannot rescale an empty weight vector"));
    }
    if let Some((i, w)) = base.iter().enumerate().find(|(_, w)| w.is_nan() || **w < 0.0) {
        return Err(Error::domain(format!("negative base weight {w} at position {i}")));
    }
    let total: f64 = base.iter().sum();
    if !total.is_finite() {
        return Err(Error::NonFinite("base weight sum".into()));
    }
    if total < epsilon_sum {
        return Ok(SumPreserved {
            weights: vec![1.0; base.len()],
            fallback: true,
        });
    }
    let len = base.len() as f64;
    Ok(SumPreserved {
        weights: base.iter().map(|w| w * len / total).collect(),
        fallback: false,
    })
}

/// Base and final token weights of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub base: Vec<f64>,
    pub normalized: Vec<f64>,
    /// Uniform fallback was used.
    pub fallback: bool,
}

/// Token weights from normalized dependency scores.
pub fn token_weights(normalized: &[f64], cfg: &ReshapeConfig) -> Result<WeightVector> {
    if normalized.is_empty() {
        return Err(Error::structural("empty dependency trace"));
    }
    let base = normalized
        .iter()
        .map(|&i| gate(i, cfg))
        .collect::<Result<Vec<_>>>()?;
    match cfg.mode {
        ReshapeMode::Uniform => Ok(WeightVector {
            normalized: base.clone(),
            base,
            fallback: false,
        }),
        ReshapeMode::NoNorm => Ok(WeightVector {
            normalized: base.clone(),
            base,
            fallback: false,
        }),
        _ => {
            let SumPreserved { weights, fallback } = sum_preserve(&base, DEFAULT_EPSILON_SUM)?;
            Ok(WeightVector {
                base,
                normalized: weights,
                fallback,
            })
        }
    }
}

/// Token-level advantages of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReshapedTrajectory {
    pub weights: WeightVector,
    pub token_advantages: Vec<f64>,
}

/// `Ã_{i,t} = A_i · ω̃_t` for every trajectory of a group.
pub fn reshape_advantages(
    advantages: &[f64],
    traces: &[DependencyTrace],
    cfg: &ReshapeConfig,
) -> Result<Vec<ReshapedTrajectory>> {
    cfg.validate()?;
    if advantages.len() != traces.len() {
        return Err(Error::structural(format!(
            "{} advantages for {} traces",
            advantages.len(),
            traces.len()
        )));
    }
    advantages
        .iter()
        .zip(traces)
        .map(|(&a, trace)| {
            let weights = token_weights(&trace.normalized, cfg)?;
            let token_advantages = weights.normalized.iter().map(|w| a * w).collect();
            Ok(ReshapedTrajectory {
                weights,
                token_advantages,
            })
        })
        .collect()
}

/// Flat-array result of [`reshape_flat`].
#[derive(Debug, Clone, PartialEq)]
pub struct FlatReshape {
    /// Token advantages of all trajectories, concatenated.
    pub token_advantages: Vec<f64>,
    pub group_advantages: Vec<f64>,
    pub degenerate: bool,
    /// One flag per trajectory.
    pub fallback: Vec<bool>,
}

/// Full pipeline over contiguous buffers: raw per-token scores of `G`
/// trajectories laid end to end, split by `lengths`, and one reward per
/// trajectory. This is the array-in/array-out surface used by foreign
/// training stacks.
pub fn reshape_flat(
    raw_scores: &[f64],
    rewards: &[f64],
    lengths: &[usize],
    cfg: &ReshapeConfig,
) -> Result<FlatReshape> {
    if lengths.len() != rewards.len() {
        return Err(Error::structural(format!(
            "{} lengths for {} rewards",
            lengths.len(),
            rewards.len()
        )));
    }
    let total: usize = lengths.iter().sum();
    if total != raw_scores.len() {
        return Err(Error::structural(format!(
            "lengths sum to {total} but {} scores were given",
            raw_scores.len()
        )));
    }
    if let Some(i) = lengths.iter().position(|l| *l == 0) {
        return Err(Error::structural(format!("trajectory {i} has length 0")));
    }
    let group = group_normalize(rewards, DEFAULT_EPSILON_STD)?;
    let mut offset = 0;
    let traces = lengths
        .iter()
        .map(|&len| {
            let slice = &raw_scores[offset..offset + len];
            offset += len;
            DependencyTrace::from_raw(slice.to_vec(), cfg.epsilon)
        })
        .collect::<Result<Vec<_>>>()?;
    let reshaped = reshape_advantages(&group.values, &traces, cfg)?;
    Ok(FlatReshape {
        token_advantages: reshaped
            .iter()
            .flat_map(|r| r.token_advantages.iter().copied())
            .collect(),
        fallback: reshaped.iter().map(|r| r.weights.fallback).collect(),
        group_advantages: group.values,
        degenerate: group.degenerate,
    })
}
