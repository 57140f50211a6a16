//! Desk-scale stand-in for a vision-language policy.
//!
//! A task pairs a visual feature vector with a short prompt. The expected
//! answer has `horizon` positions followed by an end-of-answer token. Visual
//! positions must name a token that is a fixed projection-hash of the visual
//! features; textual positions follow a fixed successor map over the previous
//! token. The policy is a single linear layer plus softmax over a feature map
//! of (previous token, position, position-gated visual features, bias). The
//! unconditioned pass zeroes the visual block without changing any shapes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::advantage::{group_normalize, reshape_advantages, GroupAdvantages, ReshapeConfig, WeightVector};
use crate::dependency::{score_trajectory, DependencyTrace, ScoreMode, TokenDistribution};
use crate::error::{Error, Result};

/// Designated end-of-answer token. Content tokens are `1..vocab_size`.
pub const END_TOKEN: usize = 0;

/// Reward weight of answer accuracy.
pub const ACCURACY_WEIGHT: f64 = 0.9;
/// Reward weight of format compliance.
pub const FORMAT_WEIGHT: f64 = 0.1;

/// Shape of a task family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskShape {
    pub vocab_size: usize,
    pub visual_dim: usize,
    /// Number of answer positions before the end token.
    pub horizon: usize,
    pub prompt_len: usize,
    /// Fixes the visual readout, the successor map and the position schedule.
    pub family_seed: u64,
}

impl Default for TaskShape {
    fn default() -> Self {
        Self {
            vocab_size: 6,
            visual_dim: 3,
            horizon: 3,
            prompt_len: 2,
            family_seed: 7,
        }
    }
}

impl TaskShape {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 4 {
            return Err(Error::structural(format!(
                "vocab_size must be >= 4, got {}",
                self.vocab_size
            )));
        }
        if self.visual_dim < 1 {
            return Err(Error::structural("visual_dim must be >= 1"));
        }
        if self.horizon < 2 {
            return Err(Error::structural(format!(
                "horizon must be >= 2, got {}",
                self.horizon
            )));
        }
        if self.prompt_len < 1 {
            return Err(Error::structural("prompt_len must be >= 1"));
        }
        Ok(())
    }

    /// Positions per trajectory at most: the answer plus the end token.
    pub fn max_len(&self) -> usize {
        self.horizon + 1
    }

    pub fn feature_dim(&self) -> usize {
        self.vocab_size + self.max_len() * (self.visual_dim + 1) + 1
    }

    pub fn param_count(&self) -> usize {
        self.vocab_size * self.feature_dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionKind {
    Visual,
    Textual,
}

/// Family-level structure shared by every instance of a shape.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskFamily {
    pub shape: TaskShape,
    pub schedule: Vec<PositionKind>,
    /// One `(vocab_size − 1) × visual_dim` readout per answer position.
    readouts: Vec<Vec<f64>>,
    /// `successor[tok]` for content tokens; index 0 unused.
    successor: Vec<usize>,
}

impl TaskFamily {
    pub fn new(shape: TaskShape) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(shape.family_seed);
        let content = shape.vocab_size - 1;

        let mut schedule: Vec<PositionKind> = (0..shape.horizon)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    PositionKind::Visual
                } else {
                    PositionKind::Textual
                }
            })
            .collect();
        // Guarantee at least one position of each kind.
        if !schedule.contains(&PositionKind::Visual) {
            let at = rng.gen_range(0..shape.horizon);
            schedule[at] = PositionKind::Visual;
        }
        if !schedule.contains(&PositionKind::Textual) {
            let at = rng.gen_range(0..shape.horizon);
            schedule[at] = PositionKind::Textual;
        }

        let readouts = (0..shape.horizon)
            .map(|_| {
                (0..content * shape.visual_dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect()
            })
            .collect();

        // Random cyclic shift keeps every successor distinct from its input.
        let shift = rng.gen_range(1..content);
        let mut successor = vec![0; shape.vocab_size];
        for tok in 1..shape.vocab_size {
            successor[tok] = 1 + (tok - 1 + shift) % content;
        }

        Ok(Self {
            shape,
            schedule,
            readouts,
            successor,
        })
    }

    pub fn successor(&self, token: usize) -> usize {
        self.successor[token]
    }

    /// Content token named by `visual` at answer position `position`.
    pub fn visual_target(&self, position: usize, visual: &[f64]) -> usize {
        let d = self.shape.visual_dim;
        let readout = &self.readouts[position];
        let mut best = (0, f64::NEG_INFINITY);
        for k in 0..self.shape.vocab_size - 1 {
            let score: f64 = readout[k * d..(k + 1) * d]
                .iter()
                .zip(visual)
                .map(|(m, v)| m * v)
                .sum();
            if score > best.1 {
                best = (k, score);
            }
        }
        1 + best.0
    }

    pub fn instance(&self, seed: u64) -> TaskInstance {
        let shape = &self.shape;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(shape.family_seed);
        let visual_features: Vec<f64> = (0..shape.visual_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let prompt_tokens: Vec<usize> = (0..shape.prompt_len)
            .map(|_| rng.gen_range(1..shape.vocab_size))
            .collect();
        let mut targets = Vec::with_capacity(shape.horizon);
        let mut prev = *prompt_tokens.last().expect("prompt_len >= 1");
        for (t, kind) in self.schedule.iter().enumerate() {
            let target = match kind {
                PositionKind::Visual => self.visual_target(t, &visual_features),
                PositionKind::Textual => self.successor(prev),
            };
            targets.push(target);
            prev = target;
        }
        TaskInstance {
            seed,
            visual_features,
            prompt_tokens,
            schedule: self.schedule.clone(),
            targets,
            horizon: shape.max_len(),
        }
    }
}

/// One image/query analogue with its canonical answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub seed: u64,
    pub visual_features: Vec<f64>,
    pub prompt_tokens: Vec<usize>,
    pub schedule: Vec<PositionKind>,
    /// Target token per answer position.
    pub targets: Vec<usize>,
    /// Maximum response length including the end token.
    pub horizon: usize,
}

impl TaskInstance {
    /// `(accuracy, format)` of a response.
    pub fn grade(&self, tokens: &[usize]) -> (bool, bool) {
        let answer = self.targets.len();
        let accurate = tokens.len() >= answer && tokens[..answer] == self.targets[..];
        let formatted = tokens.len() == answer + 1
            && tokens[answer] == END_TOKEN
            && tokens[..answer].iter().all(|t| *t != END_TOKEN);
        (accurate, formatted)
    }

    pub fn reward(&self, tokens: &[usize]) -> f64 {
        let (acc, fmt) = self.grade(tokens);
        ACCURACY_WEIGHT * f64::from(u8::from(acc)) + FORMAT_WEIGHT * f64::from(u8::from(fmt))
    }
}

/// Builds the task instance for `seed` in the family of `shape`.
pub fn generate_task(seed: u64, shape: &TaskShape) -> Result<TaskInstance> {
    Ok(TaskFamily::new(*shape)?.instance(seed))
}

/// Weights of the linear softmax policy, row-major `vocab_size × feature_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub shape: TaskShape,
    pub weights: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(shape: TaskShape) -> Self {
        Self {
            weights: vec![0.0; shape.param_count()],
            shape,
        }
    }

    /// Gaussian weights with standard deviation `scale`.
    pub fn random(shape: TaskShape, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..shape.param_count())
            .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        Self { shape, weights }
    }

    /// A policy that already partly knows the textual successor map, the
    /// end token, and a scaled copy of the visual readout at visual positions.
    /// `visual_prior = 0` gives a silent visual pathway.
    pub fn warm_start(family: &TaskFamily, textual_prior: f64, visual_prior: f64, end_prior: f64) -> Self {
        let shape = family.shape;
        let mut params = Self::zeros(shape);
        let layout = FeatureLayout::new(&shape);
        for prev in 1..shape.vocab_size {
            let idx = params.index(family.successor(prev), layout.prev_token(prev));
            params.weights[idx] = textual_prior;
        }
        let d = shape.visual_dim;
        for (t, kind) in family.schedule.iter().enumerate() {
            if *kind != PositionKind::Visual {
                continue;
            }
            let block = layout.visual_range().start + t * d;
            for k in 0..shape.vocab_size - 1 {
                for j in 0..d {
                    let idx = params.index(k + 1, block + j);
                    params.weights[idx] = visual_prior * family.readouts[t][k * d + j];
                }
            }
        }
        let idx = params.index(END_TOKEN, layout.position(shape.horizon));
        params.weights[idx] = end_prior;
        params
    }

    pub fn from_flat(shape: TaskShape, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != shape.param_count() {
            return Err(Error::structural(format!(
                "expected {} parameters, got {}",
                shape.param_count(),
                weights.len()
            )));
        }
        Ok(Self { shape, weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn index(&self, token: usize, feature: usize) -> usize {
        token * self.shape.feature_dim() + feature
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    /// Zeroes every weight reading the visual block.
    pub fn without_visual_pathway(mut self) -> Self {
        let layout = FeatureLayout::new(&self.shape);
        let f = self.shape.feature_dim();
        for row in self.weights.chunks_mut(f) {
            row[layout.visual_range()].fill(0.0);
        }
        self
    }

    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        self.weights
            .chunks(self.shape.feature_dim())
            .map(|row| row.iter().zip(features).map(|(w, x)| w * x).sum())
            .collect()
    }
}

/// Offsets of the feature blocks.
#[derive(Debug, Clone, Copy)]
pub struct FeatureLayout {
    vocab: usize,
    positions: usize,
    visual_dim: usize,
}

impl FeatureLayout {
    pub fn new(shape: &TaskShape) -> Self {
        Self {
            vocab: shape.vocab_size,
            positions: shape.max_len(),
            visual_dim: shape.visual_dim,
        }
    }

    pub fn prev_token(&self, token: usize) -> usize {
        token
    }

    pub fn position(&self, t: usize) -> usize {
        self.vocab + t
    }

    pub fn visual_range(&self) -> std::ops::Range<usize> {
        let start = self.vocab + self.positions;
        start..start + self.positions * self.visual_dim
    }

    pub fn bias(&self) -> usize {
        self.visual_range().end
    }

    pub fn dim(&self) -> usize {
        self.bias() + 1
    }
}

/// Feature vector at answer position `generated.len()`.
pub fn features(
    shape: &TaskShape,
    prompt: &[usize],
    generated: &[usize],
    visual: &[f64],
    conditioned: bool,
) -> Result<Vec<f64>> {
    let t = generated.len();
    if t >= shape.max_len() {
        return Err(Error::structural(format!(
            "position {t} beyond horizon {}",
            shape.max_len()
        )));
    }
    if visual.len() != shape.visual_dim {
        return Err(Error::structural(format!(
            "visual features have dimension {}, expected {}",
            visual.len(),
            shape.visual_dim
        )));
    }
    let prev = *generated
        .last()
        .or(prompt.last())
        .ok_or_else(|| Error::structural("empty prompt"))?;
    if prev >= shape.vocab_size {
        return Err(Error::structural(format!("token {prev} outside vocabulary")));
    }
    let layout = FeatureLayout::new(shape);
    let mut phi = vec![0.0; layout.dim()];
    phi[layout.prev_token(prev)] = 1.0;
    phi[layout.position(t)] = 1.0;
    if conditioned {
        let start = layout.visual_range().start + t * shape.visual_dim;
        phi[start..start + shape.visual_dim].copy_from_slice(visual);
    }
    phi[layout.bias()] = 1.0;
    Ok(phi)
}

/// Next-token distribution. With `conditioned = false` the visual block of
/// the feature vector is zeroed.
pub fn forward(
    params: &PolicyParams,
    prompt: &[usize],
    generated: &[usize],
    visual: &[f64],
    conditioned: bool,
) -> Result<TokenDistribution> {
    let phi = features(&params.shape, prompt, generated, visual, conditioned)?;
    TokenDistribution::from_logits(&params.logits(&phi))
}

/// One sampled response and everything derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub tokens: Vec<usize>,
    pub logprobs_current: Vec<f64>,
    pub logprobs_old: Vec<f64>,
    pub cond_dists: Vec<TokenDistribution>,
    pub uncond_dists: Vec<TokenDistribution>,
    pub trace: Option<DependencyTrace>,
    pub weights: Option<WeightVector>,
    pub token_advantages: Option<Vec<f64>>,
    pub reward: f64,
    pub accurate: bool,
    pub formatted: bool,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Temperature-1 sampling.
    #[default]
    Stochastic,
    /// Arg-max decoding, for tests and evaluation.
    Greedy,
}

fn argmax(probs: &[f64]) -> usize {
    probs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
        .0
}

fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left the cumulative sum short of 1.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Samples one response from `params_old` and records distributions under
/// `params`. `rng` drives every sampling decision.
pub fn rollout_one(
    params: &PolicyParams,
    params_old: &PolicyParams,
    task: &TaskInstance,
    sampling: Sampling,
    rng: &mut impl Rng,
) -> Result<TrajectoryRecord> {
    let same = params.weights == params_old.weights;
    let mut tokens = Vec::with_capacity(task.horizon);
    let mut record = TrajectoryRecord {
        tokens: Vec::new(),
        logprobs_current: Vec::new(),
        logprobs_old: Vec::new(),
        cond_dists: Vec::new(),
        uncond_dists: Vec::new(),
        trace: None,
        weights: None,
        token_advantages: None,
        reward: 0.0,
        accurate: false,
        formatted: false,
    };
    while tokens.len() < task.horizon {
        let old = forward(params_old, &task.prompt_tokens, &tokens, &task.visual_features, true)?;
        let token = match sampling {
            Sampling::Stochastic => sample_categorical(old.probs(), rng),
            Sampling::Greedy => argmax(old.probs()),
        };
        let cond = if same {
            old.clone()
        } else {
            forward(params, &task.prompt_tokens, &tokens, &task.visual_features, true)?
        };
        let uncond = forward(params, &task.prompt_tokens, &tokens, &task.visual_features, false)?;
        record.logprobs_old.push(old.probs()[token].ln());
        record.logprobs_current.push(cond.probs()[token].ln());
        record.cond_dists.push(cond);
        record.uncond_dists.push(uncond);
        tokens.push(token);
        if token == END_TOKEN {
            break;
        }
    }
    let (accurate, formatted) = task.grade(&tokens);
    record.reward = task.reward(&tokens);
    record.accurate = accurate;
    record.formatted = formatted;
    record.tokens = tokens;
    Ok(record)
}

/// `G` responses to one task plus their group-level statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub task: TaskInstance,
    pub trajectories: Vec<TrajectoryRecord>,
    pub advantages: Option<GroupAdvantages>,
}

impl RolloutGroup {
    pub fn rewards(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.reward).collect()
    }

    pub fn is_degenerate(&self) -> bool {
        self.advantages.as_ref().is_some_and(|a| a.degenerate)
    }

    /// Fills each trajectory's dependency trace.
    pub fn score(&mut self, mode: ScoreMode, epsilon: f64) -> Result<()> {
        for traj in &mut self.trajectories {
            traj.trace = Some(score_trajectory(
                &traj.cond_dists,
                &traj.uncond_dists,
                Some(&traj.tokens),
                mode,
                epsilon,
            )?);
        }
        Ok(())
    }

    pub fn normalize(&mut self, epsilon_std: f64) -> Result<&GroupAdvantages> {
        let adv = group_normalize(&self.rewards(), epsilon_std)?;
        Ok(self.advantages.insert(adv))
    }

    /// Token advantages per `cfg`. Requires [`score`](Self::score) and
    /// [`normalize`](Self::normalize) first.
    pub fn reshape(&mut self, cfg: &ReshapeConfig) -> Result<()> {
        let adv = self
            .advantages
            .as_ref()
            .ok_or_else(|| Error::structural("group has not been normalized"))?;
        let traces = self
            .trajectories
            .iter()
            .map(|t| {
                t.trace
                    .clone()
                    .ok_or_else(|| Error::structural("trajectory has not been scored"))
            })
            .collect::<Result<Vec<_>>>()?;
        let reshaped = reshape_advantages(&adv.values, &traces, cfg)?;
        for (traj, r) in self.trajectories.iter_mut().zip(reshaped) {
            traj.weights = Some(r.weights);
            traj.token_advantages = Some(r.token_advantages);
        }
        Ok(())
    }
}

/// Samples `g` responses; trajectory `i` uses stream `i` of the group seed so
/// the result does not depend on evaluation order.
pub fn rollout_group(
    params: &PolicyParams,
    params_old: &PolicyParams,
    task: &TaskInstance,
    g: usize,
    seed: u64,
    sampling: Sampling,
) -> Result<RolloutGroup> {
    if g < 2 {
        return Err(Error::structural(format!("group size must be >= 2, got {g}")));
    }
    let trajectories = (0..g)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            rollout_one(params, params_old, task, sampling, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RolloutGroup {
        task: task.clone(),
        trajectories,
        advantages: None,
    })
}
