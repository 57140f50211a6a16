//! Line-oriented trajectory dumps.
//!
//! Each non-blank line holds one trajectory as whitespace-separated
//! `key=value` pairs; list values are comma separated and may be empty.
//! Lines starting with `#` are comments.
//!
//! ```text
//! group=0 traj=1 tokens=3,5,0 reward=1 p_cond=0.9,0.8,0.95 p_uncond=0.2,0.7,0.9
//! ```
//!
//! `group`, `traj`, `tokens` and `reward` are required. A record is scored from
//! `raw` when present, otherwise from the sampled-token probabilities
//! `p_cond`/`p_uncond` with the k3 estimator. `damped`, `normalized`,
//! `weights`, `group_advantage` and `advantages` are outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

use crate::advantage::{group_normalize, reshape_advantages, ReshapeConfig, DEFAULT_EPSILON_STD};
use crate::dependency::{kl_k3, DependencyTrace};
use crate::error::{Error, Result};
use crate::policy_sim::TrajectoryRecord;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DumpRecord {
    pub group: usize,
    pub traj: usize,
    pub tokens: Vec<usize>,
    pub reward: f64,
    pub raw: Option<Vec<f64>>,
    pub p_cond: Option<Vec<f64>>,
    pub p_uncond: Option<Vec<f64>>,
    pub damped: Option<Vec<f64>>,
    pub normalized: Option<Vec<f64>>,
    pub weights: Option<Vec<f64>>,
    pub group_advantage: Option<f64>,
    pub advantages: Option<Vec<f64>>,
}

impl DumpRecord {
    /// Record of a simulated trajectory, carrying whatever stages have run.
    pub fn from_trajectory(group: usize, traj: usize, record: &TrajectoryRecord) -> Self {
        let sampled = |dists: &[crate::dependency::TokenDistribution]| {
            record
                .tokens
                .iter()
                .zip(dists)
                .map(|(&tok, d)| d.probs()[tok])
                .collect::<Vec<_>>()
        };
        Self {
            group,
            traj,
            tokens: record.tokens.clone(),
            reward: record.reward,
            raw: record.trace.as_ref().map(|t| t.raw.clone()),
            p_cond: Some(sampled(&record.cond_dists)),
            p_uncond: Some(sampled(&record.uncond_dists)),
            damped: record.trace.as_ref().map(|t| t.damped.clone()),
            normalized: record.trace.as_ref().map(|t| t.normalized.clone()),
            weights: record.weights.as_ref().map(|w| w.normalized.clone()),
            group_advantage: None,
            advantages: record.token_advantages.clone(),
        }
    }

    pub fn to_line(&self) -> String {
        fn list<T: std::fmt::Display>(v: &[T]) -> String {
            v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
        }
        let mut line = format!(
            "group={} traj={} tokens={} reward={}",
            self.group,
            self.traj,
            list(&self.tokens),
            self.reward
        );
        let optional = [
            ("raw", &self.raw),
            ("p_cond", &self.p_cond),
            ("p_uncond", &self.p_uncond),
            ("damped", &self.damped),
            ("normalized", &self.normalized),
            ("weights", &self.weights),
        ];
        for (key, value) in optional {
            if let Some(v) = value {
                let _ = write!(line, " {key}={}", list(v));
            }
        }
        if let Some(a) = self.group_advantage {
            let _ = write!(line, " group_advantage={a}");
        }
        if let Some(v) = &self.advantages {
            let _ = write!(line, " advantages={}", list(v));
        }
        line
    }

    fn parse_line(line: &str, line_no: usize) -> Result<Self> {
        let err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let mut fields = BTreeMap::new();
        for pair in line.split_whitespace() {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| err(format!("`{pair}` is not a key=value pair")))?;
            if fields.insert(key, value).is_some() {
                return Err(err(format!("duplicate key `{key}`")));
            }
        }
        let required = |key: &str| {
            fields
                .get(key)
                .copied()
                .ok_or_else(|| err(format!("missing required key `{key}`")))
        };
        let scalar = |key: &str, v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| err(format!("`{key}` value `{v}` is not a number")))
        };
        let index = |key: &str, v: &str| -> Result<usize> {
            v.parse::<usize>()
                .map_err(|_| err(format!("`{key}` value `{v}` is not a non-negative integer")))
        };
        let reals = |key: &str, v: &str| -> Result<Vec<f64>> {
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',').map(|x| scalar(key, x)).collect()
        };

        let mut rec = DumpRecord {
            group: index("group", required("group")?)?,
            traj: index("traj", required("traj")?)?,
            reward: scalar("reward", required("reward")?)?,
            ..DumpRecord::default()
        };
        let tokens = required("tokens")?;
        if !tokens.is_empty() {
            rec.tokens = tokens
                .split(',')
                .map(|x| index("tokens", x))
                .collect::<Result<_>>()?;
        }
        for (&key, &value) in &fields {
            match key {
                "group" | "traj" | "reward" | "tokens" => {}
                "raw" => rec.raw = Some(reals(key, value)?),
                "p_cond" => rec.p_cond = Some(reals(key, value)?),
                "p_uncond" => rec.p_uncond = Some(reals(key, value)?),
                "damped" => rec.damped = Some(reals(key, value)?),
                "normalized" => rec.normalized = Some(reals(key, value)?),
                "weights" => rec.weights = Some(reals(key, value)?),
                "group_advantage" => rec.group_advantage = Some(scalar(key, value)?),
                "advantages" => rec.advantages = Some(reals(key, value)?),
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        Ok(rec)
    }

    fn raw_scores(&self) -> Result<Vec<f64>> {
        let raw = match (&self.raw, &self.p_cond, &self.p_uncond) {
            (Some(raw), _, _) => raw.clone(),
            (None, Some(c), Some(u)) => {
                if c.len() != u.len() {
                    return Err(Error::structural(format!(
                        "group {} traj {}: {} p_cond vs {} p_uncond values",
                        self.group,
                        self.traj,
                        c.len(),
                        u.len()
                    )));
                }
                c.iter()
                    .zip(u)
                    .map(|(&c, &u)| kl_k3(c, u))
                    .collect::<Result<Vec<_>>>()?
            }
            _ => {
                return Err(Error::structural(format!(
                    "group {} traj {}: needs `raw` or both `p_cond` and `p_uncond`",
                    self.group, self.traj
                )))
            }
        };
        if raw.len() != self.tokens.len() {
            return Err(Error::structural(format!(
                "group {} traj {}: {} scores for {} tokens",
                self.group,
                self.traj,
                raw.len(),
                self.tokens.len()
            )));
        }
        Ok(raw)
    }
}

pub fn parse_dump(input: impl BufRead) -> Result<Vec<DumpRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(DumpRecord::parse_line(trimmed, i + 1)?);
    }
    Ok(out)
}

pub fn write_dump(records: &[DumpRecord]) -> String {
    records.iter().map(|r| r.to_line() + "\n").collect()
}

/// Scores every record, normalizes rewards within each `group`, and fills the
/// output fields. Records keep their input order.
pub fn score_records(records: &[DumpRecord], cfg: &ReshapeConfig) -> Result<Vec<DumpRecord>> {
    cfg.validate()?;
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(r.group).or_default().push(i);
    }
    let mut out = records.to_vec();
    for (group, members) in groups {
        let rewards: Vec<f64> = members.iter().map(|&i| records[i].reward).collect();
        let adv = group_normalize(&rewards, DEFAULT_EPSILON_STD)
            .map_err(|e| Error::structural(format!("group {group}: {e}")))?;
        let traces = members
            .iter()
            .map(|&i| DependencyTrace::from_raw(records[i].raw_scores()?, cfg.epsilon))
            .collect::<Result<Vec<_>>>()?;
        let reshaped = reshape_advantages(&adv.values, &traces, cfg)?;
        for (((&i, trace), r), a) in members.iter().zip(traces).zip(reshaped).zip(&adv.values) {
            let rec = &mut out[i];
            rec.raw = Some(trace.raw);
            rec.damped = Some(trace.damped);
            rec.normalized = Some(trace.normalized);
            rec.weights = Some(r.weights.normalized);
            rec.group_advantage = Some(*a);
            rec.advantages = Some(r.token_advantages);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advantage::ReshapeMode;

    const SAMPLE: &str = "\
# two responses to one prompt
group=0 traj=0 tokens=1,2,0 reward=1 raw=0,0.5,1
group=0 traj=1 tokens=3,0 reward=0 p_cond=0.5,0.9 p_uncond=0.25,0.9
";

    #[test]
    fn parse_and_round_trip() {
        let recs = parse_dump(SAMPLE.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].tokens, vec![1, 2, 0]);
        assert_eq!(recs[1].p_uncond, Some(vec![0.25, 0.9]));
        let again = parse_dump(write_dump(&recs).as_bytes()).unwrap();
        assert_eq!(recs, again);
    }

    #[test]
    fn scoring_fills_outputs() {
        let recs = parse_dump(SAMPLE.as_bytes()).unwrap();
        let scored = score_records(&recs, &ReshapeConfig::default()).unwrap();
        assert_eq!(scored[0].group_advantage, Some(0.5 / (0.5 + 1e-8)));
        let w: f64 = scored[0].weights.as_ref().unwrap().iter().sum();
        assert!((w - 3.0).abs() < 1e-12);
        // k3 at r = 0.5: (0.5 − 1) − ln 0.5.
        assert!((scored[1].raw.as_ref().unwrap()[0] - 0.193_147_180_559_945_3).abs() < 1e-15);
        let round = parse_dump(write_dump(&scored).as_bytes()).unwrap();
        assert_eq!(round, scored);
    }

    #[test]
    fn uniform_mode_broadcasts() {
        let recs = parse_dump(SAMPLE.as_bytes()).unwrap();
        let cfg = ReshapeConfig::default().with_mode(ReshapeMode::Uniform);
        let scored = score_records(&recs, &cfg).unwrap();
        for r in scored {
            let a = r.group_advantage.unwrap();
            assert!(r.advantages.unwrap().iter().all(|x| *x == a));
        }
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let bad = "group=0 traj=0 tokens=1 reward=1 raw=0\ngroup=0 traj=1 tokens=1 reward=x\n";
        match parse_dump(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(parse_dump("group=0 traj=0 tokens=1 reward=1 colour=red".as_bytes()).is_err());
        assert!(parse_dump("group=0 traj=0 reward=1".as_bytes()).is_err());
        assert!(parse_dump("group=0 group=1 traj=0 tokens=1 reward=1".as_bytes()).is_err());
    }

    #[test]
    fn scoring_errors() {
        let one = parse_dump("group=0 traj=0 tokens=1 reward=1 raw=0.3".as_bytes()).unwrap();
        assert!(score_records(&one, &ReshapeConfig::default()).is_err());
        let missing = parse_dump("group=0 traj=0 tokens=1 reward=1\ngroup=0 traj=1 tokens=1 reward=0 raw=1".as_bytes()).unwrap();
        assert!(score_records(&missing, &ReshapeConfig::default()).is_err());
        let short = parse_dump("group=0 traj=0 tokens=1,2 reward=1 raw=1\ngroup=0 traj=1 tokens=1 reward=0 raw=1".as_bytes()).unwrap();
        assert!(score_records(&short, &ReshapeConfig::default()).is_err());
    }
}
