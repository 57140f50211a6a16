//! Clipped surrogate objective, its analytic gradient and the training loop.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::advantage::{ReshapeConfig, DEFAULT_EPSILON_STD};
use crate::dependency::{score_trajectory, ScoreMode};
use crate::error::{Error, Result};
use crate::policy_sim::{
    features, rollout_group, rollout_one, PolicyParams, RolloutGroup, Sampling, TaskFamily,
    TaskInstance, TaskShape,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub clip_low: f64,
    pub clip_high: f64,
    pub learning_rate: f64,
    pub group_size: usize,
    /// Prompts per update.
    pub rollout_batch: usize,
    /// Number of rollout-then-update rounds.
    pub steps: usize,
    pub reshape: ReshapeConfig,
    pub score_mode: ScoreMode,
    pub epsilon_std: f64,
    /// Held-out tasks used for the per-step policy metrics.
    pub eval_tasks: usize,
    /// Logit bonus of the warm-started textual successor map.
    pub textual_prior: f64,
    /// Scale of the warm-started visual readout.
    pub visual_prior: f64,
    /// Logit bonus of the end token at the final position.
    pub end_prior: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            clip_low: 0.2,
            clip_high: 0.28,
            learning_rate: 0.3,
            group_size: 5,
            rollout_batch: 8,
            steps: 200,
            reshape: ReshapeConfig::default(),
            score_mode: ScoreMode::Exact,
            epsilon_std: DEFAULT_EPSILON_STD,
            eval_tasks: 64,
            textual_prior: 3.0,
            visual_prior: 0.3,
            end_prior: 3.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_low > 0.0 && self.clip_low < 1.0) {
            return Err(Error::domain(format!("clip_low must lie in (0, 1), got {}", self.clip_low)));
        }
        if !(self.clip_high > 0.0) || !self.clip_high.is_finite() {
            return Err(Error::domain(format!("clip_high must be > 0, got {}", self.clip_high)));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::domain(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.group_size < 2 {
            return Err(Error::domain(format!("group_size must be >= 2, got {}", self.group_size)));
        }
        if self.rollout_batch == 0 {
            return Err(Error::domain("rollout_batch must be >= 1"));
        }
        for (name, v) in [
            ("textual_prior", self.textual_prior),
            ("visual_prior", self.visual_prior),
            ("end_prior", self.end_prior),
        ] {
            if !v.is_finite() {
                return Err(Error::domain(format!("{name} must be finite, got {v}")));
            }
        }
        if self.eval_tasks == 0 {
            return Err(Error::domain("eval_tasks must be >= 1"));
        }
        self.reshape.validate()
    }
}

fn clip(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

/// One clipped surrogate term and whether its gradient is live.
fn surrogate_term(ratio: f64, adv: f64, cfg: &TrainConfig) -> (f64, bool) {
    let unclipped = ratio * adv;
    let clipped = clip(ratio, 1.0 - cfg.clip_low, 1.0 + cfg.clip_high) * adv;
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        // The clipped branch is constant in the parameters.
        (clipped, false)
    }
}

fn token_advantages(traj: &crate::policy_sim::TrajectoryRecord) -> Result<&[f64]> {
    traj.token_advantages
        .as_deref()
        .ok_or_else(|| Error::structural("trajectory has no token advantages"))
}

fn included(groups: &[RolloutGroup]) -> impl Iterator<Item = &RolloutGroup> {
    groups.iter().filter(|g| !g.is_degenerate())
}

fn token_count(groups: &[RolloutGroup]) -> usize {
    included(groups)
        .flat_map(|g| &g.trajectories)
        .map(|t| t.len())
        .sum()
}

/// Walks every included token, yielding its feature vector, current
/// distribution, sampled token, old log-probability and advantage.
fn for_each_token(
    groups: &[RolloutGroup],
    params: &PolicyParams,
    mut visit: impl FnMut(&[f64], &[f64], usize, f64, f64),
) -> Result<()> {
    for group in included(groups) {
        let task = &group.task;
        for traj in &group.trajectories {
            let advs = token_advantages(traj)?;
            if advs.len() != traj.len() {
                return Err(Error::structural("token advantages do not match trajectory length"));
            }
            for t in 0..traj.len() {
                let phi = features(
                    &params.shape,
                    &task.prompt_tokens,
                    &traj.tokens[..t],
                    &task.visual_features,
                    true,
                )?;
                let dist = crate::dependency::TokenDistribution::from_logits(&params.logits(&phi))?;
                visit(&phi, dist.probs(), traj.tokens[t], traj.logprobs_old[t], advs[t]);
            }
        }
    }
    Ok(())
}

/// Token-averaged clipped surrogate over the non-degenerate groups.
pub fn surrogate_loss(groups: &[RolloutGroup], params: &PolicyParams, cfg: &TrainConfig) -> Result<f64> {
    let n = token_count(groups);
    if n == 0 {
        // Validate advantages even when nothing contributes.
        for g in groups {
            for t in &g.trajectories {
                token_advantages(t)?;
            }
        }
        return Ok(0.0);
    }
    let mut total = 0.0;
    for_each_token(groups, params, |_, probs, tok, old_lp, adv| {
        let ratio = (probs[tok].ln() - old_lp).exp();
        total += surrogate_term(ratio, adv, cfg).0;
    })?;
    Ok(total / n as f64)
}

/// Aggregated policy gradient with its per-token ingredients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub grad: Vec<f64>,
    /// `∇ log π(o_t)` per included token, flattened like the parameters.
    pub score_terms: Vec<Vec<f64>>,
    pub advantage_terms: Vec<f64>,
}

impl GradientSample {
    pub fn norm(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Analytic gradient of [`surrogate_loss`].
///
/// Each live token contributes `ρ · Ã · ∇ log π(o_t)`; for the linear
/// softmax policy `∂ log π(y) / ∂W[k, f] = (1[k = y] − p_k) · φ_f`.
pub fn gradient(groups: &[RolloutGroup], params: &PolicyParams, cfg: &TrainConfig) -> Result<GradientSample> {
    gradient_impl(groups, params, cfg, true)
}

fn gradient_impl(
    groups: &[RolloutGroup],
    params: &PolicyParams,
    cfg: &TrainConfig,
    keep_terms: bool,
) -> Result<GradientSample> {
    let f = params.shape.feature_dim();
    let mut grad = vec![0.0; params.len()];
    let mut score_terms = Vec::new();
    let mut advantage_terms = Vec::new();
    let n = token_count(groups);
    if n == 0 {
        return Ok(GradientSample {
            grad,
            score_terms,
            advantage_terms,
        });
    }
    let inv_n = 1.0 / n as f64;
    for_each_token(groups, params, |phi, probs, tok, old_lp, adv| {
        let ratio = (probs[tok].ln() - old_lp).exp();
        let (_, live) = surrogate_term(ratio, adv, cfg);
        let coef = if live { ratio * adv * inv_n } else { 0.0 };
        let mut score = keep_terms.then(|| vec![0.0; params.len()]);
        for (k, &p) in probs.iter().enumerate() {
            let dk = f64::from(u8::from(k == tok)) - p;
            let row = k * f;
            for (j, &x) in phi.iter().enumerate() {
                if x != 0.0 {
                    grad[row + j] += coef * dk * x;
                    if let Some(s) = score.as_mut() {
                        s[row + j] = dk * x;
                    }
                }
            }
        }
        if let Some(s) = score {
            score_terms.push(s);
            advantage_terms.push(adv);
        }
    })?;
    Ok(GradientSample {
        grad,
        score_terms,
        advantage_terms,
    })
}

/// Policy metrics of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    /// Greedy accuracy on the held-out tasks.
    pub accuracy: f64,
    /// Mean entropy of the conditioned distribution along greedy responses.
    pub entropy: f64,
    /// Mean damped dependency along greedy responses.
    pub mean_dependency: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

/// Greedy accuracy, mean entropy and mean damped dependency of `params`.
pub fn evaluate(params: &PolicyParams, tasks: &[TaskInstance], cfg: &TrainConfig) -> Result<(f64, f64, f64)> {
    let mut correct = 0usize;
    let mut entropy = 0.0;
    let mut dependency = 0.0;
    let mut tokens = 0usize;
    // Greedy decoding never consults the generator.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for task in tasks {
        let traj = rollout_one(params, params, task, Sampling::Greedy, &mut rng)?;
        correct += usize::from(traj.accurate);
        let trace = score_trajectory(
            &traj.cond_dists,
            &traj.uncond_dists,
            Some(&traj.tokens),
            cfg.score_mode,
            cfg.reshape.epsilon,
        )?;
        entropy += traj.cond_dists.iter().map(|d| d.entropy()).sum::<f64>();
        dependency += trace.damped.iter().sum::<f64>();
        tokens += traj.len();
    }
    let n = tokens.max(1) as f64;
    Ok((correct as f64 / tasks.len() as f64, entropy / n, dependency / n))
}

/// Result of a completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub metrics: Vec<StepMetrics>,
    pub params: PolicyParams,
    /// Groups dropped for zero reward variance, per step.
    pub dropped_groups: Vec<usize>,
}

impl TrainOutcome {
    pub fn initial_accuracy(&self) -> f64 {
        self.metrics.first().map_or(0.0, |m| m.accuracy)
    }

    pub fn final_accuracy(&self) -> f64 {
        self.metrics.last().map_or(0.0, |m| m.accuracy)
    }
}

/// A run stopped early. Carries everything produced so far.
#[derive(Debug, Clone)]
pub struct TrainAbort {
    pub error: Error,
    pub step: usize,
    pub metrics: Vec<StepMetrics>,
    pub params: PolicyParams,
}

impl std::fmt::Display for TrainAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let norm = self.params.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        write!(
            f,
            "training aborted at step {}: {} (param norm {norm:.6e}, {} metric rows kept)",
            self.step,
            self.error,
            self.metrics.len()
        )
    }
}

impl std::error::Error for TrainAbort {}

/// Deterministic 64-bit mix used to derive sub-seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Held-out evaluation tasks of a run. Seeds are disjoint from the training
/// stream by construction of [`mix_seed`] domains.
pub fn eval_tasks(family: &TaskFamily, count: usize) -> Vec<TaskInstance> {
    (0..count as u64)
        .map(|i| family.instance(mix_seed(0xE7A1, i)))
        .collect()
}

/// Runs `cfg.steps` rounds of rollout, scoring, reshaping and gradient ascent.
///
/// Metric row `k` describes the policy before update `k`; the final row, with
/// index `cfg.steps`, describes the trained policy and has zero loss and
/// gradient norm.
pub fn train(cfg: &TrainConfig, shape: &TaskShape, seed: u64) -> Result<TrainOutcome, TrainAbort> {
    let family = TaskFamily::new(*shape).map_err(|error| TrainAbort {
        error,
        step: 0,
        metrics: Vec::new(),
        params: PolicyParams::zeros(*shape),
    })?;
    let params = PolicyParams::warm_start(&family, cfg.textual_prior, cfg.visual_prior, cfg.end_prior);
    train_from(cfg, &family, params, seed)
}

pub fn train_from(
    cfg: &TrainConfig,
    family: &TaskFamily,
    mut params: PolicyParams,
    seed: u64,
) -> Result<TrainOutcome, TrainAbort> {
    let mut metrics = Vec::with_capacity(cfg.steps + 1);
    let mut dropped_groups = Vec::with_capacity(cfg.steps);
    macro_rules! abort {
        ($step:expr, $err:expr) => {
            return Err(TrainAbort {
                error: $err,
                step: $step,
                metrics,
                params,
            })
        };
    }
    if let Err(e) = cfg.validate() {
        abort!(0, e);
    }
    let held_out = eval_tasks(family, cfg.eval_tasks);

    for step in 0..=cfg.steps {
        let (accuracy, entropy, mean_dependency) = match evaluate(&params, &held_out, cfg) {
            Ok(m) => m,
            Err(e) => abort!(step, e),
        };
        if step == cfg.steps {
            metrics.push(StepMetrics {
                step,
                accuracy,
                entropy,
                mean_dependency,
                loss: 0.0,
                grad_norm: 0.0,
            });
            break;
        }

        let step_seed = mix_seed(seed, step as u64 + 1);
        let params_old = params.clone();
        let groups: Result<Vec<RolloutGroup>> = (0..cfg.rollout_batch as u64)
            .into_par_iter()
            .map(|j| {
                let task = family.instance(mix_seed(step_seed, 2 * j));
                let mut group = rollout_group(
                    &params,
                    &params_old,
                    &task,
                    cfg.group_size,
                    mix_seed(step_seed, 2 * j + 1),
                    Sampling::Stochastic,
                )?;
                group.score(cfg.score_mode, cfg.reshape.epsilon)?;
                group.normalize(cfg.epsilon_std)?;
                group.reshape(&cfg.reshape)?;
                Ok(group)
            })
            .collect();
        let groups = match groups {
            Ok(g) => g,
            Err(e) => abort!(step, e),
        };
        dropped_groups.push(groups.iter().filter(|g| g.is_degenerate()).count());

        let loss = match surrogate_loss(&groups, &params, cfg) {
            Ok(l) => l,
            Err(e) => abort!(step, e),
        };
        let grad = match gradient_impl(&groups, &params, cfg, false) {
            Ok(g) => g,
            Err(e) => abort!(step, e),
        };
        let grad_norm = grad.norm();
        metrics.push(StepMetrics {
            step,
            accuracy,
            entropy,
            mean_dependency,
            loss,
            grad_norm,
        });
        if !loss.is_finite() || !grad_norm.is_finite() {
            abort!(
                step,
                Error::NonFinite(format!("loss {loss}, gradient norm {grad_norm}"))
            );
        }
        for (w, g) in params.weights.iter_mut().zip(&grad.grad) {
            *w += cfg.learning_rate * g;
        }
        if !params.is_finite() {
            abort!(step, Error::NonFinite("parameters after update".into()));
        }
    }
    Ok(TrainOutcome {
        metrics,
        params,
        dropped_groups,
    })
}

const CHECKPOINT_MAGIC: &str = "pgpo-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes a versioned checkpoint: a `key = value` header followed by the flat
/// parameter vector, one value per line.
pub fn write_checkpoint(
    mut out: impl Write,
    params: &PolicyParams,
    header: &[(&str, String)],
) -> std::io::Result<()> {
    let s = &params.shape;
    writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
    writeln!(out, "vocab_size = {}", s.vocab_size)?;
    writeln!(out, "visual_dim = {}", s.visual_dim)?;
    writeln!(out, "horizon = {}", s.horizon)?;
    writeln!(out, "prompt_len = {}", s.prompt_len)?;
    writeln!(out, "family_seed = {}", s.family_seed)?;
    for (k, v) in header {
        writeln!(out, "{k} = {v}")?;
    }
    writeln!(out, "params = {}", params.len())?;
    for w in &params.weights {
        // `{:?}` prints the shortest round-tripping representation.
        writeln!(out, "{w:?}")?;
    }
    Ok(())
}

/// Reads a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint(input: impl BufRead) -> Result<PolicyParams> {
    let mut lines = input.lines().enumerate();
    let parse_err = |line: usize, message: String| Error::Parse { line: line + 1, message };
    let (n, first) = lines
        .next()
        .ok_or_else(|| parse_err(0, "empty checkpoint".into()))?;
    let first = first.map_err(|e| parse_err(n, e.to_string()))?;
    let version = first
        .strip_prefix(CHECKPOINT_MAGIC)
        .map(str::trim)
        .ok_or_else(|| parse_err(n, "missing checkpoint magic".into()))?;
    if version != CHECKPOINT_VERSION.to_string() {
        return Err(parse_err(n, format!("unsupported checkpoint version {version}")));
    }
    let mut shape = TaskShape::default();
    let mut count = None;
    for (n, line) in lines.by_ref() {
        let line = line.map_err(|e| parse_err(n, e.to_string()))?;
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| parse_err(n, format!("expected `key = value`, got `{line}`")))?;
        let as_num = || value.parse::<u64>().map_err(|e| parse_err(n, format!("{key}: {e}")));
        match key {
            "vocab_size" => shape.vocab_size = as_num()? as usize,
            "visual_dim" => shape.visual_dim = as_num()? as usize,
            "horizon" => shape.horizon = as_num()? as usize,
            "prompt_len" => shape.prompt_len = as_num()? as usize,
            "family_seed" => shape.family_seed = as_num()?,
            "params" => {
                count = Some(as_num()? as usize);
                break;
            }
            _ => {}
        }
    }
    let count = count.ok_or_else(|| parse_err(0, "missing `params` entry".into()))?;
    let mut weights = Vec::with_capacity(count);
    for (n, line) in lines.take(count) {
        let line = line.map_err(|e| parse_err(n, e.to_string()))?;
        weights.push(
            line.trim()
                .parse::<f64>()
                .map_err(|e| parse_err(n, e.to_string()))?,
        );
    }
    PolicyParams::from_flat(shape, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advantage::ReshapeMode;

    fn cfg() -> TrainConfig {
        TrainConfig::default()
    }

    #[test]
    fn surrogate_term_examples() {
        let c = cfg();
        assert_eq!(surrogate_term(1.0, 0.7, &c), (0.7, true));
        assert_eq!(surrogate_term(1.0, -0.7, &c), (-0.7, true));
        let (v, live) = surrogate_term(1.5, 1.0, &c);
        assert!((v - 1.28).abs() < 1e-15 && !live);
        let (v, live) = surrogate_term(0.5, -1.0, &c);
        assert!((v + 0.8).abs() < 1e-15 && !live);
        // Negative advantage with a large ratio stays on the unclipped branch.
        assert_eq!(surrogate_term(2.0, -1.0, &c), (-2.0, true));
    }

    #[test]
    fn clip_high_is_monotone_for_positive_advantages() {
        let mut c = cfg();
        let mut last = f64::NEG_INFINITY;
        for k in 0..50 {
            c.clip_high = 0.01 * k as f64 + 0.01;
            let (v, _) = surrogate_term(1.3, 0.8, &c);
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(TrainConfig { group_size: 1, ..cfg() }.validate().is_err());
        assert!(TrainConfig { clip_low: 0.0, ..cfg() }.validate().is_err());
        assert!(TrainConfig { learning_rate: f64::NAN, ..cfg() }.validate().is_err());
    }

    fn groups_for(shape: TaskShape, mode: ReshapeMode) -> (PolicyParams, Vec<RolloutGroup>) {
        let params = PolicyParams::random(shape, 0.7, 21);
        let old = PolicyParams::random(shape, 0.7, 22);
        let reshape = ReshapeConfig::default().with_mode(mode);
        let groups = (0..4)
            .map(|s| {
                let task = crate::policy_sim::generate_task(s, &shape).unwrap();
                let mut g = rollout_group(&params, &old, &task, 5, s + 100, Sampling::Stochastic).unwrap();
                g.score(ScoreMode::Exact, 1e-6).unwrap();
                g.normalize(1e-8).unwrap();
                g.reshape(&reshape).unwrap();
                g
            })
            .collect();
        (params, groups)
    }

    #[test]
    fn zero_advantages_give_zero_gradient() {
        let shape = TaskShape::default();
        let (params, mut groups) = groups_for(shape, ReshapeMode::Full);
        for g in &mut groups {
            for t in &mut g.trajectories {
                let n = t.len();
                t.token_advantages = Some(vec![0.0; n]);
            }
        }
        let grad = gradient(&groups, &params, &cfg()).unwrap();
        assert!(grad.grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn missing_advantages_are_structural() {
        let shape = TaskShape::default();
        let (params, mut groups) = groups_for(shape, ReshapeMode::Full);
        groups[0].trajectories[0].token_advantages = None;
        groups[0].advantages.as_mut().unwrap().degenerate = false;
        assert_eq!(
            surrogate_loss(&groups, &params, &cfg()).unwrap_err().category(),
            "structural"
        );
    }

    #[test]
    fn degenerate_groups_are_excluded() {
        let shape = TaskShape::default();
        let (params, mut groups) = groups_for(shape, ReshapeMode::Full);
        for g in &mut groups {
            g.advantages.as_mut().unwrap().degenerate = true;
        }
        let grad = gradient(&groups, &params, &cfg()).unwrap();
        assert!(grad.grad.iter().all(|g| *g == 0.0));
        assert_eq!(surrogate_loss(&groups, &params, &cfg()).unwrap(), 0.0);
    }

    #[test]
    fn on_policy_loss_is_mean_advantage() {
        let shape = TaskShape::default();
        let params = PolicyParams::random(shape, 0.7, 1);
        let mut groups = Vec::new();
        for s in 0..3 {
            let task = crate::policy_sim::generate_task(s, &shape).unwrap();
            let mut g = rollout_group(&params, &params, &task, 4, s, Sampling::Stochastic).unwrap();
            g.score(ScoreMode::Exact, 1e-6).unwrap();
            g.normalize(1e-8).unwrap();
            g.reshape(&ReshapeConfig::default()).unwrap();
            groups.push(g);
        }
        let mut sum = 0.0;
        let mut n = 0;
        for g in groups.iter().filter(|g| !g.is_degenerate()) {
            for t in &g.trajectories {
                sum += t.token_advantages.as_ref().unwrap().iter().sum::<f64>();
                n += t.len();
            }
        }
        let loss = surrogate_loss(&groups, &params, &cfg()).unwrap();
        let want = if n == 0 { 0.0 } else { sum / n as f64 };
        assert!((loss - want).abs() < 1e-12);
    }

    #[test]
    fn gradient_terms_reassemble() {
        let shape = TaskShape::default();
        let (params, groups) = groups_for(shape, ReshapeMode::Full);
        let sample = gradient(&groups, &params, &cfg()).unwrap();
        assert_eq!(sample.score_terms.len(), sample.advantage_terms.len());
        assert_eq!(sample.score_terms.len(), token_count(&groups));
    }

    #[test]
    fn checkpoint_round_trip() {
        let params = PolicyParams::random(TaskShape::default(), 0.3, 5);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &params, &[("mode", "full".into()), ("step", "12".into())]).unwrap();
        let back = read_checkpoint(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, params);
        assert!(read_checkpoint(std::io::Cursor::new("pgpo-checkpoint 9\n")).is_err());
    }

    #[test]
    fn zero_learning_rate_freezes_policy_metrics() {
        let c = TrainConfig {
            learning_rate: 0.0,
            steps: 4,
            eval_tasks: 16,
            ..cfg()
        };
        let out = train(&c, &TaskShape::default(), 3).unwrap();
        assert_eq!(out.metrics.len(), 5);
        for m in &out.metrics[1..] {
            assert_eq!(m.accuracy, out.metrics[0].accuracy);
            assert_eq!(m.entropy, out.metrics[0].entropy);
            assert_eq!(m.mean_dependency, out.metrics[0].mean_dependency);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let c = TrainConfig { steps: 5, eval_tasks: 8, ..cfg() };
        let a = train(&c, &TaskShape::default(), 42).unwrap();
        let b = train(&c, &TaskShape::default(), 42).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn non_finite_logits_abort_with_state() {
        let c = TrainConfig { steps: 5, eval_tasks: 4, ..cfg() };
        let shape = TaskShape::default();
        let family = TaskFamily::new(shape).unwrap();
        let huge = PolicyParams::from_flat(shape, vec![1e308; shape.param_count()]).unwrap();
        let abort = train_from(&c, &family, huge.clone(), 1).unwrap_err();
        assert_eq!(abort.error.category(), "non_finite");
        assert_eq!(abort.step, 0);
        assert!(abort.metrics.is_empty());
        assert_eq!(abort.params, huge);
        assert!(abort.to_string().contains("aborted"));
    }
}
