//! Token visual dependency.
//!
//! A token's dependency is the KL divergence between the policy's next-token
//! distribution with visual conditioning and the same distribution with the
//! visual pathway removed. Raw divergences are log-compressed and then
//! min-max normalized per sequence into `[0, 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `Σ p = 1` accepted by [`TokenDistribution::new`].
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Additive smoothing applied to `q` when it has zero mass under `p`'s support.
pub const DEFAULT_SMOOTHING: f64 = 1e-12;

/// A normalized probability vector over a finite vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    probs: Vec<f64>,
}

impl TokenDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::structural(format!(
                "distribution needs at least 2 entries, got {}",
                probs.len()
            )));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::domain(format!("probability {p} at index {i}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::domain(format!("probabilities sum to {total}")));
        }
        Ok(Self { probs })
    }

    /// Numerically stable softmax of `logits`.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.len() < 2 {
            return Err(Error::structural("softmax needs at least 2 logits"));
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::NonFinite("logit".into()));
        }
        let mut probs: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= z;
        }
        Ok(Self { probs })
    }

    pub fn uniform(vocab: usize) -> Result<Self> {
        Self::from_logits(&vec![0.0; vocab])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, token: usize) -> Option<f64> {
        self.probs.get(token).copied()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }
}

/// `KL(p ‖ q)` in nats with the default smoothing policy.
pub fn kl_exact(p: &TokenDistribution, q: &TokenDistribution) -> Result<f64> {
    kl_exact_with(p, q, Some(DEFAULT_SMOOTHING))
}

/// `KL(p ‖ q)` in nats. `0·log 0` is taken as 0.
///
/// When `q` is zero somewhere `p` has support, `q` is additively smoothed by
/// `smoothing` and renormalized; with `smoothing = None` that case is a domain
/// error. Supports that are already absolutely continuous are left untouched.
pub fn kl_exact_with(
    p: &TokenDistribution,
    q: &TokenDistribution,
    smoothing: Option<f64>,
) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::structural(format!(
            "vocabulary mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let needs_smoothing = p
        .probs
        .iter()
        .zip(&q.probs)
        .any(|(&pi, &qi)| pi > 0.0 && qi == 0.0);

    let kl = if needs_smoothing {
        let delta = match smoothing {
            Some(d) if d > 0.0 => d,
            _ => {
                return Err(Error::domain(
                    "q has zero mass on the support of p and smoothing is disabled",
                ))
            }
        };
        let z = 1.0 + delta * q.len() as f64;
        p.probs
            .iter()
            .zip(&q.probs)
            .filter(|(pi, _)| **pi > 0.0)
            .map(|(&pi, &qi)| pi * (pi.ln() - ((qi + delta) / z).ln()))
            .sum::<f64>()
    } else {
        p.probs
            .iter()
            .zip(&q.probs)
            .filter(|(pi, _)| **pi > 0.0)
            .map(|(&pi, &qi)| pi * (pi.ln() - qi.ln()))
            .sum::<f64>()
    };
    // Gibbs: rounding may leave a tiny negative residue when p == q.
    Ok(kl.max(0.0))
}

/// Single-sample KL estimate `(r − 1) − ln r` with `r = p_uncond / p_cond`.
///
/// Unbiased for `KL(cond ‖ uncond)` when the token is drawn from the
/// conditioned distribution.
pub fn kl_k3(p_cond: f64, p_uncond: f64) -> Result<f64> {
    if !(p_cond > 0.0 && p_uncond > 0.0) || !p_cond.is_finite() || !p_uncond.is_finite() {
        return Err(Error::domain(format!(
            "k3 needs positive probabilities, got cond={p_cond} uncond={p_uncond}"
        )));
    }
    let x = p_uncond / p_cond - 1.0;
    Ok((x - x.ln_1p()).max(0.0))
}

/// Elementwise `ln(1 + s)`.
pub fn compress(raw: &[f64]) -> Result<Vec<f64>> {
    raw.iter()
        .enumerate()
        .map(|(i, &s)| {
            if s.is_nan() || s < 0.0 {
                Err(Error::domain(format!("raw score {s} at position {i} is negative")))
            } else if !s.is_finite() {
                Err(Error::NonFinite(format!("raw score at position {i}")))
            } else {
                Ok(s.ln_1p())
            }
        })
        .collect()
}

/// Sequence-wise `(x − min) / (max − min + ε)`.
pub fn minmax_normalize(damped: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if damped.is_empty() {
        return Err(Error::structural("cannot normalize an empty sequence"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::domain(format!("epsilon must be positive, got {epsilon}")));
    }
    let (min, max) = damped
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if !min.is_finite() || !max.is_finite() {
        return Err(Error::NonFinite("damped score".into()));
    }
    let denom = max - min + epsilon;
    Ok(damped.iter().map(|x| (x - min) / denom).collect())
}

/// Raw, damped and normalized dependency scores of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependencyTrace {
    pub raw: Vec<f64>,
    pub damped: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl DependencyTrace {
    pub fn from_raw(raw: Vec<f64>, epsilon: f64) -> Result<Self> {
        let damped = compress(&raw)?;
        let normalized = minmax_normalize(&damped, epsilon)?;
        Ok(Self {
            raw,
            damped,
            normalized,
        })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn mean_damped(&self) -> f64 {
        self.damped.iter().sum::<f64>() / self.damped.len() as f64
    }
}

/// How per-token raw dependency is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Full-vocabulary KL.
    #[default]
    Exact,
    /// Single-sample estimator on the generated token.
    K3,
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(ScoreMode::Exact),
            "k3" => Ok(ScoreMode::K3),
            other => Err(Error::domain(format!("unknown score mode `{other}`"))),
        }
    }
}

/// Scores one trajectory from its per-position conditioned and unconditioned
/// next-token distributions.
pub fn score_trajectory(
    cond: &[TokenDistribution],
    uncond: &[TokenDistribution],
    sampled_tokens: Option<&[usize]>,
    mode: ScoreMode,
    epsilon: f64,
) -> Result<DependencyTrace> {
    if cond.len() != uncond.len() {
        return Err(Error::structural(format!(
            "{} conditioned vs {} unconditioned distributions",
            cond.len(),
            uncond.len()
        )));
    }
    let raw = match mode {
        ScoreMode::Exact => cond
            .iter()
            .zip(uncond)
            .map(|(p, q)| kl_exact(p, q))
            .collect::<Result<Vec<_>>>()?,
        ScoreMode::K3 => {
            let tokens = sampled_tokens
                .ok_or_else(|| Error::structural("k3 scoring requires sampled tokens"))?;
            if tokens.len() != cond.len() {
                return Err(Error::structural(format!(
                    "{} sampled tokens for {} positions",
                    tokens.len(),
                    cond.len()
                )));
            }
            cond.iter()
                .zip(uncond)
                .zip(tokens)
                .map(|((p, q), &tok)| {
                    let pc = p.prob(tok).ok_or_else(|| {
                        Error::structural(format!("token {tok} outside vocabulary"))
                    })?;
                    let pu = q.prob(tok).ok_or_else(|| {
                        Error::structural(format!("token {tok} outside vocabulary"))
                    })?;
                    kl_k3(pc, pu)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    DependencyTrace::from_raw(raw, epsilon)
}

/// k3 scoring from sampled-token probabilities alone, for callers that never
/// materialize full distributions.
pub fn score_sampled(p_cond: &[f64], p_uncond: &[f64], epsilon: f64) -> Result<DependencyTrace> {
    if p_cond.len() != p_uncond.len() {
        return Err(Error::structural(format!(
            "{} conditioned vs {} unconditioned probabilities",
            p_cond.len(),
            p_uncond.len()
        )));
    }
    let raw = p_cond
        .iter()
        .zip(p_uncond)
        .map(|(&c, &u)| kl_k3(c, u))
        .collect::<Result<Vec<_>>>()?;
    DependencyTrace::from_raw(raw, epsilon)
}
