//! Independent oracles and empirical checks of the pipeline's guarantees.
//!
//! Nothing here calls into the trainer's gradient code: the finite-difference
//! oracle only sees a scalar loss closure, and the KL brute force is a naive
//! summation written separately from [`crate::dependency::kl_exact`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::advantage::{
    group_normalize, reshape_advantages, ReshapeConfig, ReshapeMode, DEFAULT_EPSILON_STD,
};
use crate::dependency::{kl_exact, kl_k3, DependencyTrace, TokenDistribution};
use crate::error::{Error, Result};
use crate::policy_sim::{generate_task, rollout_group, PolicyParams, RolloutGroup, Sampling, TaskShape};
use crate::trainer::{gradient, mix_seed, surrogate_loss, train, StepMetrics, TrainConfig};

/// Largest parameter count the finite-difference oracle accepts.
pub const DEFAULT_PARAM_CAP: usize = 200;

/// Samples per parallel chunk; fixed so results do not depend on thread count.
const CHUNK: usize = 4096;

/// Named pass/fail result with `key = value` details.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub fields: Vec<(String, String)>,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool) -> Self {
        Self {
            name: name.to_string(),
            passed,
            fields: Vec::new(),
        }
    }

    fn field(mut self, key: &str, value: impl std::fmt::Display) -> Self {
        self.fields.push((key.to_string(), value.to_string()));
        self
    }

    /// Structured text record: one `key = value` per line.
    pub fn to_record(&self) -> String {
        let mut out = format!("check = {}\npassed = {}\n", self.name, self.passed);
        for (k, v) in &self.fields {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn summary_line(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        let details: Vec<String> = self.fields.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("[{status}] {} {}", self.name, details.join(" "))
    }
}

/// Central differences `(f(θ + h·e_j) − f(θ − h·e_j)) / 2h`.
pub fn fd_gradient<F>(loss: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Oracle(format!("step size must be positive, got {h}")));
    }
    if params.len() > DEFAULT_PARAM_CAP {
        return Err(Error::Oracle(format!(
            "{} parameters exceed the oracle cap of {DEFAULT_PARAM_CAP}",
            params.len()
        )));
    }
    let mut theta = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for j in 0..params.len() {
        theta[j] = params[j] + h;
        let up = loss(&theta)?;
        theta[j] = params[j] - h;
        let down = loss(&theta)?;
        theta[j] = params[j];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Oracle(format!("non-finite loss at coordinate {j}")));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Naive `Σ p log(p / q)` with no smoothing.
pub fn brute_force_kl(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..p.len() {
        if p[i] != 0.0 {
            total += p[i] * (p[i] / q[i]).ln();
        }
    }
    total
}

/// Streaming mean and standard error.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn merge(mut self, other: Moments) -> Self {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self
    }

    fn mean(&self) -> f64 {
        self.sum / self.n
    }

    fn variance(&self) -> f64 {
        let m = self.mean();
        ((self.sum_sq / self.n - m * m) * self.n / (self.n - 1.0)).max(0.0)
    }

    fn std_error(&self) -> f64 {
        (self.variance() / self.n).sqrt()
    }
}

fn random_dist(rng: &mut ChaCha8Rng, v: usize, spread: f64) -> TokenDistribution {
    let logits: Vec<f64> = (0..v)
        .map(|_| spread * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect();
    TokenDistribution::from_logits(&logits).expect("finite logits")
}

/// `kl_exact` against the brute force on random pairs with `V ∈ [2, 64]`.
pub fn kl_oracle_check(pairs: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err: f64 = 0.0;
    let mut negatives = 0usize;
    let mut zero_mismatch = 0usize;
    for k in 0..pairs {
        let v = rng.gen_range(2..=64);
        let spread = rng.gen_range(0.1..4.0);
        let p = random_dist(&mut rng, v, spread);
        // Every tenth pair compares a distribution with itself.
        let q = if k % 10 == 0 { p.clone() } else { random_dist(&mut rng, v, spread) };
        let kl = kl_exact(&p, &q).expect("valid pair");
        max_err = max_err.max((kl - brute_force_kl(p.probs(), q.probs())).abs());
        negatives += usize::from(kl < 0.0);
        let identical = p == q;
        zero_mismatch += usize::from(identical != (kl == 0.0));
    }
    CheckOutcome::new("kl_oracle", max_err <= 1e-12 && negatives == 0 && zero_mismatch == 0)
        .field("pairs", pairs)
        .field("max_abs_error", format!("{max_err:e}"))
        .field("negatives", negatives)
        .field("zero_iff_equal_violations", zero_mismatch)
}

/// Sample mean and standard error of the k3 estimator with tokens drawn
/// from `p`, against `KL(p ‖ q)`.
pub fn k3_estimate(p: &TokenDistribution, q: &TokenDistribution, n: usize, seed: u64) -> (f64, f64) {
    let chunks = n.div_ceil(CHUNK);
    let moments = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let mut m = Moments::default();
            for _ in 0..CHUNK.min(n - c * CHUNK) {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut tok = p.len() - 1;
                for (i, pi) in p.probs().iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        tok = i;
                        break;
                    }
                }
                m.push(kl_k3(p.probs()[tok], q.probs()[tok]).expect("positive probabilities"));
            }
            m
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Moments::default(), Moments::merge);
    (moments.mean(), moments.std_error())
}

/// Pointwise non-negativity on random ratios and unbiasedness on fixed pairs.
pub fn k3_check(pointwise: usize, pairs: usize, draws: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut negatives = 0usize;
    for _ in 0..pointwise {
        let log_r: f64 = rng.gen_range(-20.0..20.0);
        let c: f64 = rng.gen_range(1e-9..1.0);
        let u = (c * log_r.exp()).clamp(1e-300, 1e300);
        negatives += usize::from(kl_k3(c, u).expect("positive") < 0.0);
    }
    let mut worst_z: f64 = 0.0;
    for k in 0..pairs {
        let v = 2 + k % 15;
        let p = random_dist(&mut rng, v, 1.0);
        let q = random_dist(&mut rng, v, 1.0);
        let exact = kl_exact(&p, &q).expect("valid pair");
        let (mean, se) = k3_estimate(&p, &q, draws, mix_seed(seed, k as u64));
        worst_z = worst_z.max((mean - exact).abs() / se);
    }
    CheckOutcome::new("k3_estimator", negatives == 0 && worst_z < 4.0)
        .field("pointwise_cases", pointwise)
        .field("negatives", negatives)
        .field("pairs", pairs)
        .field("draws", draws)
        .field("max_abs_z", format!("{worst_z:.4}"))
}

/// Random raw dependency scores: heavy tailed with occasional zeros and ties.
pub fn random_raw_scores(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let exp = Exp::new(1.0).expect("rate 1");
    let mut raw: Vec<f64> = (0..len)
        .map(|_| match rng.gen_range(0..10) {
            0 => 0.0,
            1 => 10.0 * exp.sample(rng),
            _ => exp.sample(rng) * exp.sample(rng),
        })
        .collect();
    if len > 2 && rng.gen_bool(0.1) {
        let (a, b) = (rng.gen_range(0..len), rng.gen_range(0..len));
        raw[a] = raw[b];
    }
    raw
}

/// Mass conservation in every mode over fuzzed trajectories, with `no_norm`
/// as a negative control that must break it at least once.
pub fn mass_conservation_check(cases: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0usize;
    let mut no_norm_breaks = 0usize;
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let len = rng.gen_range(1..=256);
        let raw = random_raw_scores(&mut rng, len);
        let a: f64 = rng.gen_range(-3.0..3.0);
        let t = len as f64;
        let trace = DependencyTrace::from_raw(raw, crate::advantage::DEFAULT_EPSILON).expect("valid");
        for mode in ReshapeMode::ALL {
            let cfg = ReshapeConfig::default().with_mode(mode);
            let out = &reshape_advantages(&[a], std::slice::from_ref(&trace), &cfg).expect("valid")[0];
            let sum_w: f64 = out.weights.normalized.iter().sum();
            let sum_a: f64 = out.token_advantages.iter().sum();
            let rel_w = (sum_w - t).abs() / t;
            let rel_a = if a == 0.0 { sum_a.abs() } else { (sum_a - t * a).abs() / (t * a).abs() };
            if mode.preserves_sum() {
                worst = worst.max(rel_w).max(rel_a);
                violations += usize::from(rel_w > 1e-9 || rel_a > 1e-9);
            } else if rel_w > 1e-9 {
                no_norm_breaks += 1;
            }
        }
    }
    CheckOutcome::new("mass_conservation", violations == 0 && no_norm_breaks > 0)
        .field("cases", cases)
        .field("violations", violations)
        .field("max_rel_error", format!("{worst:e}"))
        .field("no_norm_breaks", no_norm_breaks)
}

/// `Σ_i A_i = 0` on fuzzed non-degenerate reward vectors.
pub fn zero_mean_check(cases: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    while checked < cases {
        let g = rng.gen_range(2..=64);
        let rewards: Vec<f64> = match rng.gen_range(0..3) {
            // Verifiable-reward style values.
            0 => (0..g).map(|_| [0.0, 0.1, 0.9, 1.0][rng.gen_range(0..4)]).collect(),
            1 => (0..g).map(|_| rng.gen_range(-100.0..100.0)).collect(),
            _ => (0..g).map(|_| StandardNormal.sample(&mut rng)).collect(),
        };
        let adv = group_normalize(&rewards, DEFAULT_EPSILON_STD).expect("g >= 2");
        if adv.degenerate {
            continue;
        }
        checked += 1;
        worst = worst.max(adv.values.iter().sum::<f64>().abs());
    }
    CheckOutcome::new("zero_mean_advantages", worst <= 1e-9)
        .field("cases", cases)
        .field("max_abs_sum", format!("{worst:e}"))
}

fn pipeline_weights(raw: &[f64], cfg: &ReshapeConfig) -> Vec<f64> {
    let trace = DependencyTrace::from_raw(raw.to_vec(), cfg.epsilon).expect("valid raw scores");
    reshape_advantages(&[1.0], &[trace], cfg).expect("valid trace")[0]
        .weights
        .normalized
        .clone()
}

/// A reproducing input for a property violation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub beta: f64,
    pub raw: Vec<f64>,
    pub index: usize,
    /// Bumped value (monotonicity) or the compared index (rank).
    pub other: f64,
}

/// Rounding slack for comparing weights that are equal in exact arithmetic,
/// such as `T·w / w` for a lone maximum.
const ULP_SLACK: f64 = 8.0 * f64::EPSILON;

fn monotonicity_violated(raw: &[f64], index: usize, bumped: f64, cfg: &ReshapeConfig) -> bool {
    let before = pipeline_weights(raw, cfg)[index];
    let mut raised = raw.to_vec();
    raised[index] = bumped;
    pipeline_weights(&raised, cfg)[index] < before - ULP_SLACK * before.abs()
}

fn rank_violated(raw: &[f64], a: usize, b: usize, strict: bool, cfg: &ReshapeConfig) -> bool {
    let w = pipeline_weights(raw, cfg);
    if strict {
        w[a] <= w[b]
    } else {
        w[a] < w[b] - ULP_SLACK * w[b].abs()
    }
}

/// Greedily drops positions other than the protected ones while the
/// violation persists.
fn shrink(mut raw: Vec<f64>, protected: &[usize], still_fails: impl Fn(&[f64], &[usize]) -> bool) -> (Vec<f64>, Vec<usize>) {
    let mut keep = protected.to_vec();
    let mut i = 0;
    while i < raw.len() {
        if keep.contains(&i) || raw.len() <= keep.len() {
            i += 1;
            continue;
        }
        let mut candidate = raw.clone();
        candidate.remove(i);
        let remapped: Vec<usize> = keep.iter().map(|&k| if k > i { k - 1 } else { k }).collect();
        if still_fails(&candidate, &remapped) {
            raw = candidate;
            keep = remapped;
        } else {
            i += 1;
        }
    }
    (raw, keep)
}

/// Monotonicity and rank-preservation drivers over the full
/// compress → normalize → gate → sum-preserve chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub beta: f64,
    pub monotonicity_cases: usize,
    pub monotonicity_violations: usize,
    pub rank_cases: usize,
    pub rank_violations: usize,
    /// Strict rank ordering was demanded (`β > 0`).
    pub strict_rank: bool,
    pub counterexample: Option<Counterexample>,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.monotonicity_violations == 0 && self.rank_violations == 0
    }
}

pub fn property_drivers_for(beta: f64, cases: usize, seed: u64) -> PropertyReport {
    let cfg = ReshapeConfig {
        beta,
        ..ReshapeConfig::default()
    };
    let strict = beta > 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = PropertyReport {
        beta,
        monotonicity_cases: cases,
        monotonicity_violations: 0,
        rank_cases: 0,
        rank_violations: 0,
        strict_rank: strict,
        counterexample: None,
    };

    for _ in 0..cases {
        let len = rng.gen_range(1..=64);
        let raw = random_raw_scores(&mut rng, len);
        let index = rng.gen_range(0..len);
        let bump = rng.gen_range(0.01..2.0) * (1.0 + raw[index]);
        let bumped = raw[index] + bump;
        if monotonicity_violated(&raw, index, bumped, &cfg) {
            report.monotonicity_violations += 1;
            if report.counterexample.is_none() {
                let (raw, keep) = shrink(raw, &[index], |r, k| monotonicity_violated(r, k[0], bumped, &cfg));
                report.counterexample = Some(Counterexample { beta, raw, index: keep[0], other: bumped });
            }
        }
    }

    while report.rank_cases < cases {
        let len = rng.gen_range(2..=64);
        let raw = random_raw_scores(&mut rng, len);
        let (a, b) = (rng.gen_range(0..len), rng.gen_range(0..len));
        if raw[a] <= raw[b] {
            continue;
        }
        report.rank_cases += 1;
        if rank_violated(&raw, a, b, strict, &cfg) {
            report.rank_violations += 1;
            if report.counterexample.is_none() {
                let (raw, keep) = shrink(raw, &[a, b], |r, k| rank_violated(r, k[0], k[1], strict, &cfg));
                report.counterexample = Some(Counterexample { beta, raw, index: keep[0], other: keep[1] as f64 });
            }
        }
    }
    report
}

/// Drivers for `β ∈ {0, 0.5, 1, 2}`; `β = 0` only demands non-strict order.
pub fn property_drivers(cases: usize, seed: u64) -> Vec<PropertyReport> {
    [0.0, 0.5, 1.0, 2.0]
        .into_iter()
        .enumerate()
        .map(|(k, beta)| property_drivers_for(beta, cases, mix_seed(seed, k as u64)))
        .collect()
}

pub fn property_check(cases: usize, seed: u64) -> CheckOutcome {
    let reports = property_drivers(cases, seed);
    let mut out = CheckOutcome::new("monotonicity_and_rank", reports.iter().all(PropertyReport::passed));
    for r in &reports {
        out = out
            .field(&format!("beta_{}_monotonicity_violations", r.beta), r.monotonicity_violations)
            .field(&format!("beta_{}_rank_violations", r.beta), r.rank_violations)
            .field(&format!("beta_{}_strict", r.beta), r.strict_rank);
        if let Some(c) = &r.counterexample {
            out = out.field(&format!("beta_{}_counterexample", r.beta), format!("{c:?}"));
        }
    }
    out.field("cases_per_property", cases)
}

/// Random groups for gradient checks, collected under `old`.
pub fn oracle_groups(
    shape: &TaskShape,
    old: &PolicyParams,
    reshape: &ReshapeConfig,
    groups: usize,
    seed: u64,
) -> Result<Vec<RolloutGroup>> {
    (0..groups as u64)
        .map(|k| {
            let task = generate_task(mix_seed(seed, 2 * k), shape)?;
            let mut g = rollout_group(old, old, &task, 5, mix_seed(seed, 2 * k + 1), Sampling::Stochastic)?;
            g.score(crate::dependency::ScoreMode::Exact, reshape.epsilon)?;
            g.normalize(DEFAULT_EPSILON_STD)?;
            g.reshape(reshape)?;
            Ok(g)
        })
        .collect()
}

/// Relative error `‖a − b‖ / ‖b‖` of the analytic gradient against central
/// differences at random parameter points.
pub fn gradient_oracle_check(shape: &TaskShape, points: usize, seeds: &[u64]) -> Result<CheckOutcome> {
    gradient_oracle_check_with(&TrainConfig::default(), shape, points, seeds)
}

pub fn gradient_oracle_check_with(
    cfg: &TrainConfig,
    shape: &TaskShape,
    points: usize,
    seeds: &[u64],
) -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    let mut n_params = 0;
    for &seed in seeds {
        let old = PolicyParams::random(*shape, 0.8, mix_seed(seed, 1));
        n_params = old.len();
        let groups = oracle_groups(shape, &old, &cfg.reshape, 6, mix_seed(seed, 2))?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 3));
        for _ in 0..points {
            let mut params = old.clone();
            for w in &mut params.weights {
                *w += 0.15 * Distribution::<f64>::sample(&StandardNormal, &mut rng);
            }
            let analytic = gradient(&groups, &params, cfg)?.grad;
            let loss = |theta: &[f64]| {
                let p = PolicyParams::from_flat(*shape, theta.to_vec())?;
                surrogate_loss(&groups, &p, cfg)
            };
            let numeric = fd_gradient(loss, &params.weights, 1e-5)?;
            let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-12);
            worst = worst.max(diff / scale);
        }
    }
    Ok(CheckOutcome::new("gradient_oracle", worst <= 1e-5 && n_params <= DEFAULT_PARAM_CAP)
        .field("params", n_params)
        .field("points_per_seed", points)
        .field("seeds", seeds.len())
        .field("max_rel_error", format!("{worst:e}")))
}

/// GRPO token advantages written directly as a broadcast of `A_i`.
pub fn vanilla_token_advantages(group: &RolloutGroup) -> Result<Vec<Vec<f64>>> {
    let adv = group
        .advantages
        .as_ref()
        .ok_or_else(|| Error::structural("group has not been normalized"))?;
    Ok(group
        .trajectories
        .iter()
        .zip(&adv.values)
        .map(|(t, &a)| vec![a; t.len()])
        .collect())
}

/// `uniform` mode against an independently broadcast GRPO baseline, bitwise,
/// on identical rollouts.
pub fn uniform_equivalence_check(shape: &TaskShape, seeds: &[u64]) -> Result<CheckOutcome> {
    let cfg = TrainConfig::default();
    let uniform = ReshapeConfig::default().with_mode(ReshapeMode::Uniform);
    let mut mismatched_tokens = 0usize;
    let mut mismatched_grads = 0usize;
    let mut tokens = 0usize;
    for &seed in seeds {
        let old = PolicyParams::random(*shape, 0.8, seed);
        let groups = oracle_groups(shape, &old, &uniform, 6, seed)?;
        let mut baseline = groups.clone();
        for g in &mut baseline {
            let advs = vanilla_token_advantages(g)?;
            for (t, a) in g.trajectories.iter_mut().zip(advs) {
                t.token_advantages = Some(a);
            }
        }
        for (g, b) in groups.iter().zip(&baseline) {
            for (t, u) in g.trajectories.iter().zip(&b.trajectories) {
                let (x, y) = (t.token_advantages.as_ref().unwrap(), u.token_advantages.as_ref().unwrap());
                tokens += x.len();
                mismatched_tokens += x.iter().zip(y).filter(|(p, q)| p.to_bits() != q.to_bits()).count();
            }
        }
        let mut params = old.clone();
        params.weights.iter_mut().for_each(|w| *w *= 1.05);
        let ga = gradient(&groups, &params, &cfg)?.grad;
        let gb = gradient(&baseline, &params, &cfg)?.grad;
        mismatched_grads += ga.iter().zip(&gb).filter(|(p, q)| p.to_bits() != q.to_bits()).count();
    }
    Ok(CheckOutcome::new("uniform_equivalence", mismatched_tokens == 0 && mismatched_grads == 0)
        .field("tokens", tokens)
        .field("mismatched_token_advantages", mismatched_tokens)
        .field("mismatched_gradient_entries", mismatched_grads))
}

/// Split of a trajectory's positions by the gate threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisancePartition {
    pub visual_set: Vec<usize>,
    pub nuisance_set: Vec<usize>,
    pub epsilon_cap: f64,
}

impl NuisancePartition {
    pub fn from_scores(normalized: &[f64], tau: f64, epsilon_cap: f64) -> Self {
        let (visual_set, nuisance_set) = (0..normalized.len()).partition(|&t| normalized[t] >= tau);
        Self {
            visual_set,
            nuisance_set,
            epsilon_cap,
        }
    }

    /// Whether `weights` respect the cap on every nuisance position.
    pub fn respects_cap(&self, weights: &[f64]) -> bool {
        self.nuisance_set.iter().all(|&k| weights[k] <= self.epsilon_cap)
    }
}

/// Second-moment and covariance statistics of one gradient estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub second_moment_visual: f64,
    pub second_moment_visual_se: f64,
    pub second_moment_nuisance: f64,
    pub second_moment_nuisance_se: f64,
    /// Trace of the estimator covariance.
    pub trace_cov: f64,
    pub trace_cov_se: f64,
    /// `E‖g‖²` of the raw score function.
    pub fisher_trace_estimate: f64,
    /// `E[A ‖g‖²]`.
    pub cross_term_trace: f64,
    pub mu: f64,
    pub samples: usize,
    /// Relative standard error of a headline quantity exceeded 10%.
    pub inconclusive: bool,
}

/// Synthetic trajectories with designated visual and nuisance positions and
/// independently drawn per-position score vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuppressionSetup {
    pub visual_positions: usize,
    pub nuisance_positions: usize,
    pub score_dim: usize,
    /// Upper bound of the nuisance weights.
    pub epsilon_cap: f64,
    /// Weight on visual positions.
    pub visual_weight: f64,
    pub visual_scale: f64,
    pub nuisance_scale: f64,
}

impl Default for SuppressionSetup {
    fn default() -> Self {
        Self {
            visual_positions: 4,
            nuisance_positions: 12,
            score_dim: 8,
            epsilon_cap: 0.05,
            visual_weight: 1.0,
            visual_scale: 1.0,
            nuisance_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuppressionReport {
    pub partition: NuisancePartition,
    pub grpo: VarianceReport,
    pub pgpo: VarianceReport,
    /// PGPO over GRPO nuisance second moment.
    pub nuisance_ratio: f64,
    /// Visual-component difference in combined standard errors.
    pub visual_z: f64,
}

#[derive(Clone, Copy, Default)]
struct EstimatorAccum {
    visual: Moments,
    nuisance: Moments,
    norm_sq: Moments,
    score_sq: Moments,
}

impl EstimatorAccum {
    fn merge(self, o: Self) -> Self {
        Self {
            visual: self.visual.merge(o.visual),
            nuisance: self.nuisance.merge(o.nuisance),
            norm_sq: self.norm_sq.merge(o.norm_sq),
            score_sq: self.score_sq.merge(o.score_sq),
        }
    }
}

fn suppression_accumulate(setup: &SuppressionSetup, pgpo: bool, n: usize, seed: u64) -> (EstimatorAccum, Vec<f64>) {
    let d = setup.score_dim;
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<(EstimatorAccum, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let mut acc = EstimatorAccum::default();
            let mut sum_g = vec![0.0; d];
            let mut gv = vec![0.0; d];
            let mut gb = vec![0.0; d];
            for _ in 0..CHUNK.min(n - c * CHUNK) {
                let a: f64 = StandardNormal.sample(&mut rng);
                gv.fill(0.0);
                gb.fill(0.0);
                let mut score_sq = 0.0;
                for t in 0..setup.visual_positions + setup.nuisance_positions {
                    let visual = t < setup.visual_positions;
                    let scale = if visual { setup.visual_scale } else { setup.nuisance_scale };
                    // Weight drawn independently of the score vector.
                    let w = match (pgpo, visual) {
                        (false, _) => 1.0,
                        (true, true) => setup.visual_weight,
                        (true, false) => setup.epsilon_cap * rng.gen::<f64>(),
                    };
                    let target = if visual { &mut gv } else { &mut gb };
                    for x in target.iter_mut() {
                        let u = scale * Distribution::<f64>::sample(&StandardNormal, &mut rng);
                        score_sq += u * u;
                        *x += a * w * u;
                    }
                }
                let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
                acc.visual.push(sq(&gv));
                acc.nuisance.push(sq(&gb));
                let total: f64 = gv.iter().zip(&gb).map(|(x, y)| (x + y) * (x + y)).sum();
                acc.norm_sq.push(total);
                acc.score_sq.push(score_sq);
                for j in 0..d {
                    sum_g[j] += gv[j] + gb[j];
                }
            }
            (acc, sum_g)
        })
        .collect();
    let mut acc = EstimatorAccum::default();
    let mut sum_g = vec![0.0; d];
    for (a, s) in parts {
        acc = acc.merge(a);
        for (x, y) in sum_g.iter_mut().zip(s) {
            *x += y;
        }
    }
    let mean_g = sum_g.into_iter().map(|s| s / n as f64).collect();
    (acc, mean_g)
}

fn suppression_report(acc: &EstimatorAccum, mean_g: &[f64], n: usize) -> VarianceReport {
    let mean_sq: f64 = mean_g.iter().map(|x| x * x).sum();
    let rel = |m: &Moments| if m.mean() > 0.0 { m.std_error() / m.mean() } else { 0.0 };
    VarianceReport {
        second_moment_visual: acc.visual.mean(),
        second_moment_visual_se: acc.visual.std_error(),
        second_moment_nuisance: acc.nuisance.mean(),
        second_moment_nuisance_se: acc.nuisance.std_error(),
        trace_cov: acc.norm_sq.mean() - mean_sq,
        trace_cov_se: acc.norm_sq.std_error(),
        fisher_trace_estimate: acc.score_sq.mean(),
        cross_term_trace: 0.0,
        mu: 0.0,
        samples: n,
        inconclusive: rel(&acc.visual) > 0.1 || rel(&acc.nuisance) > 0.1,
    }
}

/// Nuisance and visual second-moment components of the broadcast (GRPO)
/// and reweighted (PGPO) estimators, from independent sample streams.
pub fn variance_suppression_experiment(setup: &SuppressionSetup, n: usize, seed: u64) -> Result<SuppressionReport> {
    if n < 2 {
        return Err(Error::structural("need at least 2 samples"));
    }
    if setup.visual_positions == 0 || setup.nuisance_positions == 0 || setup.score_dim == 0 {
        return Err(Error::structural("setup needs visual positions, nuisance positions and a score dimension"));
    }
    if !(setup.epsilon_cap >= 0.0) {
        return Err(Error::domain("epsilon_cap must be >= 0"));
    }
    let (g_acc, g_mean) = suppression_accumulate(setup, false, n, mix_seed(seed, 1));
    let (p_acc, p_mean) = suppression_accumulate(setup, true, n, mix_seed(seed, 2));
    let grpo = suppression_report(&g_acc, &g_mean, n);
    let mut pgpo = suppression_report(&p_acc, &p_mean, n);
    // An exactly vanishing nuisance component is resolved, not noisy.
    pgpo.inconclusive = g_acc.visual.std_error() / g_acc.visual.mean() > 0.1
        || p_acc.visual.std_error() / p_acc.visual.mean() > 0.1;
    let nuisance_ratio = pgpo.second_moment_nuisance / grpo.second_moment_nuisance;
    let visual_z = (pgpo.second_moment_visual - grpo.second_moment_visual).abs()
        / (pgpo.second_moment_visual_se.powi(2) + grpo.second_moment_visual_se.powi(2)).sqrt();
    let total = setup.visual_positions + setup.nuisance_positions;
    Ok(SuppressionReport {
        partition: NuisancePartition {
            visual_set: (0..setup.visual_positions).collect(),
            nuisance_set: (setup.visual_positions..total).collect(),
            epsilon_cap: setup.epsilon_cap,
        },
        grpo,
        pgpo,
        nuisance_ratio,
        visual_z,
    })
}

pub fn suppression_check(n: usize, seed: u64) -> Result<CheckOutcome> {
    let setup = SuppressionSetup::default();
    let r = variance_suppression_experiment(&setup, n, seed)?;
    let bound = setup.epsilon_cap.powi(2) * 1.1;
    let passed = r.nuisance_ratio <= bound && r.visual_z < 3.0 && !r.pgpo.inconclusive && !r.grpo.inconclusive;
    Ok(CheckOutcome::new("variance_suppression", passed)
        .field("samples", n)
        .field("epsilon_cap", setup.epsilon_cap)
        .field("nuisance_ratio", format!("{:e}", r.nuisance_ratio))
        .field("bound", format!("{bound:e}"))
        .field("visual_grpo", format!("{:.6}", r.grpo.second_moment_visual))
        .field("visual_pgpo", format!("{:.6}", r.pgpo.second_moment_visual))
        .field("visual_z", format!("{:.4}", r.visual_z)))
}

/// Score-function generator for the mean-shift experiment: one categorical
/// draw `y ~ p`, score `g = e_y − p`, and a zero-mean advantage
/// `A* = r_y − E[r] + noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanShiftSetup {
    pub probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub noise: f64,
}

impl Default for MeanShiftSetup {
    fn default() -> Self {
        Self {
            probs: vec![0.4, 0.3, 0.2, 0.1],
            rewards: vec![1.0, 0.0, 0.5, 2.0],
            noise: 0.5,
        }
    }
}

impl MeanShiftSetup {
    fn validate(&self) -> Result<()> {
        TokenDistribution::new(self.probs.clone())?;
        if self.rewards.len() != self.probs.len() {
            return Err(Error::structural("one reward per outcome required"));
        }
        Ok(())
    }

    fn mean_reward(&self) -> f64 {
        self.probs.iter().zip(&self.rewards).map(|(p, r)| p * r).sum()
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> (f64, usize) {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut y = self.probs.len() - 1;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                y = i;
                break;
            }
        }
        let noise: f64 = StandardNormal.sample(rng);
        (self.rewards[y] - self.mean_reward() + self.noise * noise, y)
    }

    /// Exact `tr F = 1 − ‖p‖²`.
    pub fn exact_trace_fisher(&self) -> f64 {
        1.0 - self.probs.iter().map(|p| p * p).sum::<f64>()
    }

    fn score_sq(&self, y: usize) -> f64 {
        let p2: f64 = self.probs.iter().map(|p| p * p).sum();
        1.0 - 2.0 * self.probs[y] + p2
    }
}

fn shifted_moments(setup: &MeanShiftSetup, mu: f64, n: usize, seed: u64) -> (Moments, Vec<Moments>) {
    let d = setup.probs.len();
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<(Moments, Vec<Moments>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let mut norm = Moments::default();
            let mut coords = vec![Moments::default(); d];
            for _ in 0..CHUNK.min(n - c * CHUNK) {
                let (a, y) = setup.draw(&mut rng);
                let s = a + mu;
                let mut sq = 0.0;
                for (j, m) in coords.iter_mut().enumerate() {
                    let g = f64::from(u8::from(j == y)) - setup.probs[j];
                    m.push(s * g);
                    sq += (s * g).powi(2);
                }
                norm.push(sq);
            }
            (norm, coords)
        })
        .collect();
    let mut norm = Moments::default();
    let mut coords = vec![Moments::default(); d];
    for (n_part, c_part) in parts {
        norm = norm.merge(n_part);
        for (x, y) in coords.iter_mut().zip(c_part) {
            *x = x.merge(y);
        }
    }
    (norm, coords)
}

/// Least-squares quadratic `y = a·x² + b·x + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub r_squared: f64,
    /// Standard error of `a` propagated from per-point standard errors.
    pub a_se: f64,
}

fn solve3(m: [[f64; 3]; 3], v: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(m);
    if d.abs() < 1e-300 {
        return None;
    }
    let mut out = [0.0; 3];
    for (col, o) in out.iter_mut().enumerate() {
        let mut mc = m;
        for row in 0..3 {
            mc[row][col] = v[row];
        }
        *o = det(mc) / d;
    }
    Some(out)
}

/// Fits a quadratic to `(x, y)` points; `y_se` are the per-point standard
/// errors used to propagate uncertainty into the leading coefficient.
pub fn fit_quadratic(x: &[f64], y: &[f64], y_se: &[f64]) -> Result<QuadraticFit> {
    if x.len() < 3 || x.len() != y.len() || y.len() != y_se.len() {
        return Err(Error::structural("quadratic fit needs >= 3 matched points"));
    }
    let mut normal = [[0.0; 3]; 3];
    let mut rhs = [0.0; 3];
    for (&xi, &yi) in x.iter().zip(y) {
        let basis = [xi * xi, xi, 1.0];
        for r in 0..3 {
            for c in 0..3 {
                normal[r][c] += basis[r] * basis[c];
            }
            rhs[r] += basis[r] * yi;
        }
    }
    let [a, b, c] = solve3(normal, rhs).ok_or_else(|| Error::domain("singular quadratic design"))?;
    // `a` is linear in y: a = Σ w_i y_i, with w_i the first row of the
    // pseudo-inverse applied to each point.
    let mut a_var = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        let basis = [xi * xi, xi, 1.0];
        let w = solve3(normal, basis).expect("non-singular")[0];
        a_var += (w * y_se[i]).powi(2);
    }
    let mean_y = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean_y).powi(2)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| (yi - (a * xi * xi + b * xi + c)).powi(2))
        .sum();
    Ok(QuadraticFit {
        a,
        b,
        c,
        r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
        a_se: a_var.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanShiftReport {
    pub reports: Vec<VarianceReport>,
    pub trace_fisher: f64,
    pub trace_fisher_se: f64,
    pub trace_cross: f64,
    pub trace_cross_se: f64,
    /// Largest `|Δ tr Cov − (μ² tr F + 2μ tr C)|` in standard errors.
    pub max_delta_z: f64,
    /// Largest per-coordinate shift of the estimator mean in standard errors.
    pub max_mean_shift_z: f64,
    pub fit: QuadraticFit,
    /// `|a − tr F|` in combined standard errors.
    pub leading_z: f64,
}

/// Covariance of the shifted estimator `(A* + μ) g` across `mu_grid`, each μ
/// on its own sample stream, with `tr F` and `tr C` estimated on a further
/// independent stream.
pub fn mean_shift_experiment(setup: &MeanShiftSetup, mu_grid: &[f64], n: usize, seed: u64) -> Result<MeanShiftReport> {
    setup.validate()?;
    if mu_grid.len() < 3 {
        return Err(Error::structural("need at least 3 shift values"));
    }
    if n < 2 {
        return Err(Error::structural("need at least 2 samples"));
    }

    // tr F = E‖g‖², tr C = E[A* ‖g‖²].
    let chunks = n.div_ceil(CHUNK);
    let (fisher, cross) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xF));
            rng.set_stream(c as u64);
            let (mut f, mut x) = (Moments::default(), Moments::default());
            for _ in 0..CHUNK.min(n - c * CHUNK) {
                let (a, y) = setup.draw(&mut rng);
                let s = setup.score_sq(y);
                f.push(s);
                x.push(a * s);
            }
            (f, x)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((Moments::default(), Moments::default()), |(f, x), (g, y)| (f.merge(g), x.merge(y)));
    let (tr_f, tr_f_se) = (fisher.mean(), fisher.std_error());
    let (tr_c, tr_c_se) = (cross.mean(), cross.std_error());

    let mut reports = Vec::with_capacity(mu_grid.len());
    let mut means: Vec<Vec<(f64, f64)>> = Vec::with_capacity(mu_grid.len());
    for (k, &mu) in mu_grid.iter().enumerate() {
        let (norm, coords) = shifted_moments(setup, mu, n, mix_seed(seed, 100 + k as u64));
        let mean_sq: f64 = coords.iter().map(|m| m.mean().powi(2)).sum();
        let trace_cov = norm.mean() - mean_sq;
        let trace_cov_se = norm.std_error();
        reports.push(VarianceReport {
            second_moment_visual: norm.mean(),
            second_moment_visual_se: norm.std_error(),
            second_moment_nuisance: 0.0,
            second_moment_nuisance_se: 0.0,
            trace_cov,
            trace_cov_se,
            fisher_trace_estimate: tr_f,
            cross_term_trace: tr_c,
            mu,
            samples: n,
            inconclusive: trace_cov > 0.0 && trace_cov_se / trace_cov > 0.1,
        });
        means.push(coords.iter().map(|m| (m.mean(), m.std_error())).collect());
    }

    let base = mu_grid
        .iter()
        .position(|m| *m == 0.0)
        .ok_or_else(|| Error::domain("shift grid must contain 0"))?;
    let mut max_delta_z: f64 = 0.0;
    let mut max_mean_shift_z: f64 = 0.0;
    for (k, &mu) in mu_grid.iter().enumerate() {
        if k == base {
            continue;
        }
        let observed = reports[k].trace_cov - reports[base].trace_cov;
        let predicted = mu * mu * tr_f + 2.0 * mu * tr_c;
        let se = (reports[k].trace_cov_se.powi(2)
            + reports[base].trace_cov_se.powi(2)
            + (mu * mu * tr_f_se).powi(2)
            + (2.0 * mu * tr_c_se).powi(2))
        .sqrt();
        max_delta_z = max_delta_z.max((observed - predicted).abs() / se);
        for ((m_k, se_k), (m_0, se_0)) in means[k].iter().zip(&means[base]) {
            let z = (m_k - m_0).abs() / (se_k.powi(2) + se_0.powi(2)).sqrt();
            max_mean_shift_z = max_mean_shift_z.max(z);
        }
    }

    let ys: Vec<f64> = reports.iter().map(|r| r.trace_cov).collect();
    let ses: Vec<f64> = reports.iter().map(|r| r.trace_cov_se).collect();
    let fit = fit_quadratic(mu_grid, &ys, &ses)?;
    let leading_z = (fit.a - tr_f).abs() / (fit.a_se.powi(2) + tr_f_se.powi(2)).sqrt();

    Ok(MeanShiftReport {
        reports,
        trace_fisher: tr_f,
        trace_fisher_se: tr_f_se,
        trace_cross: tr_c,
        trace_cross_se: tr_c_se,
        max_delta_z,
        max_mean_shift_z,
        fit,
        leading_z,
    })
}

pub const MEAN_SHIFT_GRID: [f64; 5] = [0.0, 1.0, 2.0, 4.0, 8.0];

pub fn mean_shift_check(n: usize, seed: u64) -> Result<CheckOutcome> {
    let r = mean_shift_experiment(&MeanShiftSetup::default(), &MEAN_SHIFT_GRID, n, seed)?;
    let passed = r.fit.r_squared >= 0.99
        && r.fit.a > 0.0
        && r.leading_z < 3.0
        && r.max_mean_shift_z < 3.0
        && r.max_delta_z < 3.0;
    let traces: Vec<String> = r.reports.iter().map(|v| format!("{:.6}", v.trace_cov)).collect();
    Ok(CheckOutcome::new("mean_shift_covariance", passed)
        .field("samples", n)
        .field("mu_grid", "0,1,2,4,8")
        .field("trace_cov", traces.join(","))
        .field("trace_fisher", format!("{:.6}", r.trace_fisher))
        .field("trace_cross", format!("{:.6}", r.trace_cross))
        .field("fit_a", format!("{:.6}", r.fit.a))
        .field("fit_r_squared", format!("{:.6}", r.fit.r_squared))
        .field("leading_z", format!("{:.4}", r.leading_z))
        .field("max_delta_z", format!("{:.4}", r.max_delta_z))
        .field("max_mean_shift_z", format!("{:.4}", r.max_mean_shift_z)))
}

/// One-sided sign-test p-value `P(X ≥ wins)` for `X ~ Binomial(n, 1/2)`,
/// with ties already dropped from `n`.
pub fn sign_test_p_value(wins: usize, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut log_choose = 0.0;
    let mut total = 0.0;
    for k in 0..=n {
        if k > 0 {
            log_choose += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        if k >= wins {
            total += (log_choose - n as f64 * std::f64::consts::LN_2).exp();
        }
    }
    total.min(1.0)
}

/// Whether the mean dependency of the last quarter of a run is at least
/// that of the first quarter.
pub fn dependency_trend_holds(metrics: &[StepMetrics]) -> bool {
    if metrics.is_empty() {
        return false;
    }
    let q = (metrics.len() / 4).max(1);
    let mean = |rows: &[StepMetrics]| rows.iter().map(|m| m.mean_dependency).sum::<f64>() / rows.len() as f64;
    mean(&metrics[metrics.len() - q..]) >= mean(&metrics[..q])
}

/// Paired PGPO (`cfg.reshape.mode`) against uniform GRPO runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalReport {
    pub seeds: usize,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub p_value: f64,
    pub mean_final_pgpo: f64,
    pub mean_final_grpo: f64,
    pub mean_initial: f64,
    /// Runs whose dependency trend holds.
    pub trend_runs: usize,
}

impl DirectionalReport {
    pub fn trend_fraction(&self) -> f64 {
        self.trend_runs as f64 / self.seeds as f64
    }

    pub fn passed(&self) -> bool {
        self.seeds >= 20
            && self.mean_final_pgpo >= self.mean_final_grpo
            && self.p_value < 0.05
            && self.trend_fraction() >= 0.8
    }

    pub fn outcome(&self) -> CheckOutcome {
        CheckOutcome::new("directional_training", self.passed())
            .field("seeds", self.seeds)
            .field("wins", self.wins)
            .field("losses", self.losses)
            .field("ties", self.ties)
            .field("sign_test_p", format!("{:e}", self.p_value))
            .field("mean_final_pgpo", format!("{:.4}", self.mean_final_pgpo))
            .field("mean_final_grpo", format!("{:.4}", self.mean_final_grpo))
            .field("mean_initial", format!("{:.4}", self.mean_initial))
            .field("trend_fraction", format!("{:.3}", self.trend_fraction()))
    }
}

pub fn directional_training_check(cfg: &TrainConfig, shape: &TaskShape, seeds: &[u64]) -> Result<DirectionalReport> {
    if seeds.is_empty() {
        return Err(Error::structural("need at least one seed"));
    }
    let grpo_cfg = TrainConfig {
        reshape: cfg.reshape.with_mode(ReshapeMode::Uniform),
        ..cfg.clone()
    };
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let p = train(cfg, shape, seed).map_err(|a| a.error)?;
            let g = train(&grpo_cfg, shape, seed).map_err(|a| a.error)?;
            Ok((p, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = DirectionalReport {
        seeds: seeds.len(),
        wins: 0,
        losses: 0,
        ties: 0,
        p_value: 1.0,
        mean_final_pgpo: 0.0,
        mean_final_grpo: 0.0,
        mean_initial: 0.0,
        trend_runs: 0,
    };
    for (p, g) in &runs {
        let (a, b) = (p.final_accuracy(), g.final_accuracy());
        match a.partial_cmp(&b) {
            Some(std::cmp::Ordering::Greater) => report.wins += 1,
            Some(std::cmp::Ordering::Less) => report.losses += 1,
            _ => report.ties += 1,
        }
        report.mean_final_pgpo += a;
        report.mean_final_grpo += b;
        report.mean_initial += p.initial_accuracy();
        report.trend_runs += usize::from(dependency_trend_holds(&p.metrics));
    }
    let n = runs.len() as f64;
    report.mean_final_pgpo /= n;
    report.mean_final_grpo /= n;
    report.mean_initial /= n;
    report.p_value = sign_test_p_value(report.wins, report.wins + report.losses);
    Ok(report)
}

/// Sample counts for [`run_suite`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSizes {
    pub kl_pairs: usize,
    pub k3_pointwise: usize,
    pub k3_draws: usize,
    pub fuzz_cases: usize,
    pub property_cases: usize,
    pub gradient_points: usize,
    pub gradient_seeds: usize,
    pub experiment_samples: usize,
    /// Paired training seeds; 0 skips the directional check.
    pub training_seeds: usize,
}

impl Default for SuiteSizes {
    fn default() -> Self {
        Self {
            kl_pairs: 10_000,
            k3_pointwise: 100_000,
            k3_draws: 100_000,
            fuzz_cases: 10_000,
            property_cases: 10_000,
            gradient_points: 10,
            gradient_seeds: 5,
            experiment_samples: 100_000,
            training_seeds: 20,
        }
    }
}

/// Every check, in a fixed order. `train` and `shape` drive the gradient,
/// equivalence and directional checks.
pub fn run_suite(sizes: &SuiteSizes, seed: u64, train: &TrainConfig, shape: &TaskShape) -> Result<Vec<CheckOutcome>> {
    let shape = *shape;
    let seeds: Vec<u64> = (0..sizes.gradient_seeds as u64).map(|k| mix_seed(seed, 0x6_0000 + k)).collect();
    let mut out = vec![
        kl_oracle_check(sizes.kl_pairs, mix_seed(seed, 1)),
        k3_check(sizes.k3_pointwise, 10, sizes.k3_draws, mix_seed(seed, 2)),
        mass_conservation_check(sizes.fuzz_cases, mix_seed(seed, 3)),
        zero_mean_check(sizes.fuzz_cases, mix_seed(seed, 4)),
        property_check(sizes.property_cases, mix_seed(seed, 5)),
        gradient_oracle_check_with(train, &shape, sizes.gradient_points, &seeds)?,
        uniform_equivalence_check(&shape, &seeds)?,
        suppression_check(sizes.experiment_samples, mix_seed(seed, 7))?,
        mean_shift_check(sizes.experiment_samples, mix_seed(seed, 8))?,
    ];
    if sizes.training_seeds > 0 {
        let seeds: Vec<u64> = (0..sizes.training_seeds as u64).map(|k| mix_seed(seed, 0x7_0000 + k)).collect();
        out.push(directional_training_check(train, &shape, &seeds)?.outcome());
    }
    Ok(out)
}
