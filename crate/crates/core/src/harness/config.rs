//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::env::EnvSpec;
use crate::model::ModelSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "one")]
    pub gamma: f64,
    pub env: EnvSpec,
    #[serde(default)]
    pub exploration: Exploration,
    pub learners: Vec<LearnerSpec>,
    /// Metrics written to the CSV; defaults to every metric the
    /// environment supports.
    #[serde(default)]
    pub metrics: Option<Vec<Metric>>,
    #[serde(default)]
    pub selection: Option<Selection>,
    /// Keep every `log_every`-th episode (plus the last) in the CSV.
    #[serde(default = "one_usize")]
    pub log_every: usize,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default = "default_level")]
    pub ci_level: f64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Free-form provenance, e.g. which model fallback a run uses.
    #[serde(default)]
    pub notes: Option<String>,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn default_resamples() -> usize {
    1000
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    ChunkedTdV,
    ChunkedSarsa,
    ChunkedExpectedSarsa,
    ChunkedFactored,
    SarsaLambda,
    ExpectedSarsaLambda,
    TdOneOverN,
    Tdc,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::ChunkedTdV => "chunked_td_v",
            Algorithm::ChunkedSarsa => "chunked_sarsa",
            Algorithm::ChunkedExpectedSarsa => "chunked_expected_sarsa",
            Algorithm::ChunkedFactored => "chunked_factored",
            Algorithm::SarsaLambda => "sarsa_lambda",
            Algorithm::ExpectedSarsaLambda => "expected_sarsa_lambda",
            Algorithm::TdOneOverN => "td_one_over_n",
            Algorithm::Tdc => "tdc",
        }
    }

    pub fn is_chunked(self) -> bool {
        matches!(
            self,
            Algorithm::ChunkedTdV | Algorithm::ChunkedSarsa | Algorithm::ChunkedExpectedSarsa | Algorithm::ChunkedFactored
        )
    }

    pub fn has_constant_lambda(self) -> bool {
        matches!(self, Algorithm::SarsaLambda | Algorithm::ExpectedSarsaLambda)
    }

    /// State-value learners evaluate the behaviour policy; the rest control.
    pub fn is_value(self) -> bool {
        matches!(self, Algorithm::ChunkedTdV | Algorithm::TdOneOverN | Algorithm::Tdc)
    }

    pub fn uses_step_size(self) -> bool {
        !matches!(self, Algorithm::TdOneOverN | Algorithm::Tdc)
    }
}

/// A learning-rate grid: explicit values or `base * 2^e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaGrid {
    List(Vec<f64>),
    Powers { base: f64, exponents: Vec<i32> },
}

impl Default for AlphaGrid {
    fn default() -> Self {
        AlphaGrid::List(Vec::new())
    }
}

impl AlphaGrid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            AlphaGrid::List(v) => v.clone(),
            AlphaGrid::Powers { base, exponents } => exponents.iter().map(|&e| base * 2f64.powi(e)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    pub label: String,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub alpha: AlphaGrid,
    /// Constant λ grid for the baselines.
    #[serde(default)]
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    /// One Q-table per reward component (implied by `chunked_factored`).
    #[serde(default)]
    pub factored: bool,
}

impl LearnerSpec {
    pub fn uses_factored_tables(&self) -> bool {
        self.factored || self.algorithm == Algorithm::ChunkedFactored
    }
}

/// ε schedule over episodes for ε-greedy behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Exploration {
    Constant { epsilon: f64 },
    /// `phases` in order, then `epsilon` for the remaining episodes.
    Phased { phases: Vec<Phase>, epsilon: f64 },
    /// Linear from `start` to `end` over `episodes`, then `end`.
    Linear { start: f64, end: f64, episodes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub episodes: usize,
    pub epsilon: f64,
}

impl Default for Exploration {
    fn default() -> Self {
        Exploration::Constant { epsilon: 1.0 }
    }
}

impl Exploration {
    pub fn epsilon(&self, episode: usize) -> f64 {
        match self {
            Exploration::Constant { epsilon } => *epsilon,
            Exploration::Phased { phases, epsilon } => {
                let mut end = 0;
                for p in phases {
                    end += p.episodes;
                    if episode < end {
                        return p.epsilon;
                    }
                }
                *epsilon
            }
            Exploration::Linear { start, end, episodes } => {
                if *episodes == 0 || episode >= *episodes {
                    *end
                } else {
                    start + (end - start) * episode as f64 / *episodes as f64
                }
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        let ok = |e: f64| (0.0..=1.0).contains(&e);
        let all = match self {
            Exploration::Constant { epsilon } => ok(*epsilon),
            Exploration::Phased { phases, epsilon } => ok(*epsilon) && phases.iter().all(|p| ok(p.epsilon)),
            Exploration::Linear { start, end, .. } => ok(*start) && ok(*end),
        };
        if all {
            Ok(())
        } else {
            Err("exploration epsilon outside [0, 1]".into())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Return,
    DeltaQ,
    Regretful,
    TreasureMissed,
    StartValue,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Return => "return",
            Metric::DeltaQ => "delta_q",
            Metric::Regretful => "regretful",
            Metric::TreasureMissed => "treasure_missed",
            Metric::StartValue => "start_value",
        }
    }

    pub fn parse(s: &str) -> Option<Metric> {
        [Metric::Return, Metric::DeltaQ, Metric::Regretful, Metric::TreasureMissed, Metric::StartValue]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

/// How the best grid cell per learner label is picked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum Selection {
    /// Smallest seed-mean of the metric summed over all episodes.
    MinTotal { metric: Metric },
    /// Smallest sum over logged episodes of `(seed-mean - target)^2`.
    MinSquaredError { metric: Metric, target: f64 },
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: String| Err(HarnessError::Config(m));
        if self.learners.is_empty() {
            return err("no learners".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return err("seeds must be distinct".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return err(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if self.log_every == 0 {
            return err("log_every must be positive".into());
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) || self.bootstrap_resamples == 0 {
            return err("bad bootstrap settings".into());
        }
        self.exploration.validate().map_err(HarnessError::Config)?;
        for l in &self.learners {
            let a = l.alpha.values();
            if l.algorithm.uses_step_size() {
                if a.is_empty() {
                    return err(format!("{}: alpha grid is empty", l.label));
                }
                if a.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                    return err(format!("{}: alpha must be positive", l.label));
                }
            }
            if l.algorithm.has_constant_lambda() {
                if l.lambda.is_empty() {
                    return err(format!("{}: lambda grid is empty", l.label));
                }
                if l.lambda.iter().any(|x| !(0.0..=1.0).contains(x)) {
                    return err(format!("{}: lambda outside [0, 1]", l.label));
                }
            } else if !l.lambda.is_empty() {
                return err(format!("{}: {} takes no lambda", l.label, l.algorithm.name()));
            }
            if l.algorithm.is_chunked() && l.model.is_none() {
                return err(format!("{}: chunked learners need a model", l.label));
            }
            if l.algorithm.is_value() && l.factored {
                return err(format!("{}: value learners have no factored form", l.label));
            }
        }
        Ok(())
    }

    /// Stable identifier of the parsed configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn metrics(&self) -> Vec<Metric> {
        if let Some(m) = &self.metrics {
            return m.clone();
        }
        let mut m = vec![Metric::Return];
        match self.env {
            EnvSpec::ChainAndSplit(_) => m.push(Metric::DeltaQ),
            EnvSpec::AccumulatedCharge(_) => m.push(Metric::Regretful),
            EnvSpec::KeyToDoor(_) => m.push(Metric::TreasureMissed),
            EnvSpec::RandomAcyclic(_) => {}
        }
        if self.learners.iter().any(|l| l.algorithm.is_value()) {
            m.push(Metric::StartValue);
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
        name = "t"
        episodes = 10
        seeds = [1, 2]
        [env]
        name = "chain_and_split"
        chain_length = 4
        [exploration]
        kind = "phased"
        phases = [{ episodes = 3, epsilon = 1.0 }]
        epsilon = 0.1
        [[learners]]
        label = "SARSA"
        algorithm = "sarsa_lambda"
        alpha = { base = 0.1, exponents = [0, -1] }
        lambda = [0.0, 1.0]
        [[learners]]
        label = "C"
        algorithm = "chunked_sarsa"
        alpha = [0.5]
        model = { name = "tabular_count" }
    "#;

    #[test]
    fn parses_and_hashes_stably() {
        let c = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(c.learners[0].alpha.values(), vec![0.1, 0.05]);
        assert_eq!(c.exploration.epsilon(2), 1.0);
        assert_eq!(c.exploration.epsilon(3), 0.1);
        assert_eq!(c.hash(), ExperimentConfig::from_toml(SAMPLE).unwrap().hash());
        let mut d = c.clone();
        d.episodes = 11;
        assert_ne!(c.hash(), d.hash());
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml(&SAMPLE.replace("[1, 2]", "[1, 1]")).is_err());
        assert!(ExperimentConfig::from_toml(&SAMPLE.replace("alpha = [0.5]", "alpha = []")).is_err());
        assert!(ExperimentConfig::from_toml(&SAMPLE.replace("sarsa_lambda", "q_learning")).is_err());
        assert!(ExperimentConfig::from_toml(&SAMPLE.replace("model = { name = \"tabular_count\" }", "")).is_err());
    }

    #[test]
    fn linear_schedule() {
        let e = Exploration::Linear { start: 1.0, end: 0.1, episodes: 10 };
        assert_eq!(e.epsilon(0), 1.0);
        assert!((e.epsilon(5) - 0.55).abs() < 1e-12);
        assert_eq!(e.epsilon(10), 0.1);
    }
}
