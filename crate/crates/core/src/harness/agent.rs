//! The interaction loop for one (grid cell, seed) run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{Algorithm, ExperimentConfig, LearnerSpec, Metric};
use super::metrics::metric_delta_q;
use super::HarnessError;
use crate::env::{AnyEnv, ChainAndSplit};
use crate::learn::{
    Bootstrap, FactoredQLearner, QStep, TabularQLearner, TdOneOverN, Tdc, ValueLearner,
};
use crate::mdp::{epsilon_greedy, Action, ActionDist, Discount, Environment, State};
use crate::model::{AnyModel, LambdaSource};
use crate::rng::{self, StreamRng};

/// One point of a sweep: a learner with a concrete α (and λ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub learner: usize,
    pub label: String,
    pub algorithm: Algorithm,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
}

/// Cross product of every learner's α and λ grids, in config order.
pub fn expand_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for (li, l) in cfg.learners.iter().enumerate() {
        let alphas: Vec<Option<f64>> = if l.algorithm.uses_step_size() {
            l.alpha.values().into_iter().map(Some).collect()
        } else {
            vec![None]
        };
        let lambdas: Vec<Option<f64>> =
            if l.algorithm.has_constant_lambda() { l.lambda.iter().copied().map(Some).collect() } else { vec![None] };
        for &alpha in &alphas {
            for &lambda in &lambdas {
                out.push(Cell {
                    index: out.len(),
                    learner: li,
                    label: l.label.clone(),
                    algorithm: l.algorithm,
                    alpha,
                    lambda,
                });
            }
        }
    }
    out
}

/// Per-episode metric streams of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub cell: Cell,
    pub seed: u64,
    pub config_hash: String,
    pub streams: BTreeMap<Metric, Vec<f64>>,
    /// Transitions whose target fell outside a neural head's support.
    pub model_clamped: u64,
}

impl RunRecord {
    pub fn total(&self, m: Metric) -> f64 {
        self.streams.get(&m).map_or(0.0, |s| s.iter().sum())
    }

    pub fn last(&self, m: Metric) -> Option<f64> {
        self.streams.get(&m).and_then(|s| s.last().copied())
    }
}

enum Learner {
    Value(ValueLearner<f64>),
    Td1n(TdOneOverN<f64>),
    Tdc(Tdc<f64>),
    Q(TabularQLearner<f64>),
    Factored(FactoredQLearner<f64>),
}

impl Learner {
    fn begin_episode(&mut self) {
        match self {
            Learner::Value(l) => l.begin_episode(),
            Learner::Td1n(l) => l.begin_episode(),
            Learner::Tdc(l) => l.begin_episode(),
            Learner::Q(l) => l.begin_episode(),
            Learner::Factored(l) => l.begin_episode(),
        }
    }

    /// Global action values at `s`, or `None` for state-value learners.
    fn q_row(&self, s: &State) -> Option<smallvec::SmallVec<[f64; 4]>> {
        match self {
            Learner::Q(l) => Some(l.q_row(s).into()),
            Learner::Factored(l) => Some(l.q_row(s)),
            _ => None,
        }
    }

    fn value(&self, s: &State) -> f64 {
        match self {
            Learner::Value(l) => l.table.value(s),
            Learner::Td1n(l) => l.value(s),
            Learner::Tdc(l) => l.value(s),
            _ => f64::NAN,
        }
    }
}

fn build_learner(spec: &LearnerSpec, cell: &Cell, env: &AnyEnv, gamma: f64) -> Result<Learner, HarnessError> {
    let d = Discount::new(gamma)?;
    let alpha = cell.alpha.unwrap_or(1.0);
    let actions = Environment::<f64>::max_actions(env);
    let boot = match cell.algorithm {
        Algorithm::ChunkedSarsa | Algorithm::SarsaLambda => Bootstrap::Sarsa,
        _ => Bootstrap::Expected,
    };
    Ok(match cell.algorithm {
        Algorithm::ChunkedTdV => Learner::Value(ValueLearner::new(alpha, d)?),
        Algorithm::TdOneOverN => Learner::Td1n(TdOneOverN::new()),
        Algorithm::Tdc => Learner::Tdc(Tdc::new()),
        _ if spec.uses_factored_tables() => {
            let comps = reward_components(env)
                .ok_or_else(|| HarnessError::Config(format!("{}: environment has no reward vector", spec.label)))?;
            Learner::Factored(FactoredQLearner::new(comps, actions, boot, alpha, d)?)
        }
        _ => Learner::Q(TabularQLearner::new(actions, boot, alpha, d)?),
    })
}

fn reward_components(env: &AnyEnv) -> Option<usize> {
    match env {
        AnyEnv::KeyToDoor(k) => Some(k.components()),
        _ => None,
    }
}

/// Runs every episode of `cell` under `seed`.
pub fn run_cell(cfg: &ExperimentConfig, cell: &Cell, seed: u64, hash: &str) -> Result<RunRecord, HarnessError> {
    let spec = &cfg.learners[cell.learner];
    let mut env = cfg.env.build(seed).map_err(HarnessError::Config)?;
    let mut model = match &spec.model {
        Some(m) => Some(m.build::<f64>(&cfg.env, &env, seed)?),
        None => None,
    };
    let mut learner = build_learner(spec, cell, &env, cfg.gamma)?;
    let mut rng = rng::stream(seed, &[rng::tag::EPISODE]);
    let metrics = cfg.metrics();
    let mut streams: BTreeMap<Metric, Vec<f64>> =
        metrics.iter().map(|&m| (m, Vec::with_capacity(cfg.episodes))).collect();
    let delta_q_width = match &env {
        AnyEnv::ChainAndSplit(c) => Some(c.root_actions()),
        _ => None,
    };
    for ep in 0..cfg.episodes {
        let eps = cfg.exploration.epsilon(ep);
        let out = run_episode(&mut env, &mut learner, model.as_mut(), cell, eps, &mut rng)?;
        for (&m, s) in streams.iter_mut() {
            s.push(match m {
                Metric::Return => out.ret,
                Metric::Regretful => (out.first_action != Action(0)) as u8 as f64,
                Metric::TreasureMissed => match &env {
                    AnyEnv::KeyToDoor(k) => (!k.has_treasure(&out.last_state)) as u8 as f64,
                    _ => f64::NAN,
                },
                Metric::DeltaQ => match (delta_q_width, learner.q_row(&ChainAndSplit::start_state())) {
                    (Some(w), Some(row)) => metric_delta_q(&row[..w]),
                    _ => f64::NAN,
                },
                Metric::StartValue => learner.value(&out.start_state),
            });
        }
    }
    let model_clamped = match &model {
        Some(AnyModel::Neural(n)) => n.clamped_targets(),
        _ => 0,
    };
    Ok(RunRecord { cell: cell.clone(), seed, config_hash: hash.to_string(), streams, model_clamped })
}

struct EpisodeOutcome {
    ret: f64,
    first_action: Action,
    start_state: State,
    last_state: State,
}

fn behaviour(learner: &Learner, s: &State, legal: usize, eps: f64) -> Result<ActionDist<f64>, HarnessError> {
    Ok(match learner.q_row(s) {
        Some(row) => epsilon_greedy(&row[..legal], eps)?,
        None => ActionDist::uniform(legal)?,
    })
}

fn run_episode(
    env: &mut AnyEnv,
    learner: &mut Learner,
    mut model: Option<&mut AnyModel>,
    cell: &Cell,
    eps: f64,
    rng: &mut StreamRng,
) -> Result<EpisodeOutcome, HarnessError> {
    learner.begin_episode();
    let start = Environment::<f64>::reset(env, rng).state;
    let mut x = start.clone();
    let mut dist = behaviour(learner, &x, Environment::<f64>::legal_actions(env, &x), eps)?;
    let mut a = dist.sample(rng);
    let first_action = a;
    let mut ret = 0.0;
    let limit = Environment::<f64>::max_steps(env);
    for _ in 0..limit {
        let (p, done) = Environment::<f64>::step(env, a, rng)?;
        ret += p.reward;
        if let Some(m) = model.as_deref_mut() {
            LambdaSource::<f64>::observe(m, &x, a, &p.state)?;
        }
        let (next_dist, next_a) = if done {
            (None, None)
        } else {
            let d = behaviour(learner, &p.state, Environment::<f64>::legal_actions(env, &p.state), eps)?;
            let na = d.sample(rng);
            (Some(d), Some(na))
        };
        let m = model.as_deref();
        match learner {
            Learner::Value(l) => {
                let lambda = m.expect("chunked learner has a model").policy_marginal_prob(&x, &p.state, &dist)?;
                l.step(&x, p.reward, &p.state, done, lambda)?;
            }
            Learner::Td1n(l) => {
                l.step(&x, p.reward, &p.state, done)?;
            }
            Learner::Tdc(l) => {
                l.step(&x, p.reward, &p.state, done)?;
            }
            Learner::Q(l) => {
                let step = QStep {
                    state: &x,
                    action: a,
                    reward: p.reward,
                    reward_vector: p.reward_vector.as_deref(),
                    next: &p.state,
                    done,
                    next_action: next_a,
                    next_dist: next_dist.as_ref(),
                };
                let lambda = scalar_lambda(cell, m, &step, &dist)?;
                l.step(&step, lambda)?;
            }
            Learner::Factored(l) => {
                let step = QStep {
                    state: &x,
                    action: a,
                    reward: p.reward,
                    reward_vector: p.reward_vector.as_deref(),
                    next: &p.state,
                    done,
                    next_action: next_a,
                    next_dist: next_dist.as_ref(),
                };
                if cell.algorithm == Algorithm::ChunkedFactored {
                    let m = m.expect("chunked learner has a model");
                    let lambdas = m.component_marginal_probs(&x, &p.state, &dist)?;
                    l.step(&step, &lambdas)?;
                } else {
                    let lambda = scalar_lambda(cell, m, &step, &dist)?;
                    l.step(&step, &[lambda])?;
                }
            }
        }
        if done {
            return Ok(EpisodeOutcome { ret, first_action, start_state: start, last_state: p.state });
        }
        x = p.state;
        dist = next_dist.expect("non-terminal step has a next distribution");
        a = next_a.expect("non-terminal step has a next action");
    }
    Err(HarnessError::Run(format!("episode exceeded {limit} steps")))
}

/// The shared trace decay for scalar-λ learners.
fn scalar_lambda(
    cell: &Cell,
    model: Option<&AnyModel>,
    step: &QStep<'_, f64>,
    dist: &ActionDist<f64>,
) -> Result<f64, HarnessError> {
    if let Some(l) = cell.lambda {
        return Ok(l);
    }
    let m = model.ok_or_else(|| HarnessError::Config(format!("{}: no model", cell.label)))?;
    Ok(match cell.algorithm {
        Algorithm::ChunkedSarsa => {
            let pi_next = match (step.next_dist, step.next_action) {
                (Some(d), Some(a)) => d.prob(a),
                _ => 1.0,
            };
            m.sarsa_joint_prob(step.state, step.action, step.next, pi_next)?
        }
        _ => m.policy_marginal_prob(step.state, step.next, dist)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(&format!(
            r#"
name = "t"
episodes = 20
seeds = [1]
[env]
name = "key_to_door"
horizon = 8
distractors = 2
{extra}
"#
        ))
        .unwrap()
    }

    #[test]
    fn grid_expands_alpha_then_lambda() {
        let c = cfg(
            r#"
[[learners]]
label = "es"
algorithm = "expected_sarsa_lambda"
alpha = { base = 0.1, exponents = [0, -1] }
lambda = [0.0, 0.5, 1.0]
factored = true
[[learners]]
label = "tdc"
algorithm = "tdc"
"#,
        );
        let cells = expand_cells(&c);
        assert_eq!(cells.len(), 7);
        assert_eq!((cells[1].alpha, cells[1].lambda), (Some(0.1), Some(0.5)));
        assert_eq!((cells[6].alpha, cells[6].lambda), (None, None));
        assert!(cells.iter().enumerate().all(|(i, c)| c.index == i));
    }

    #[test]
    fn runs_are_reproducible_and_complete() {
        let c = cfg(
            r#"
[[learners]]
label = "cf"
algorithm = "chunked_factored"
alpha = [0.05]
model = { name = "factored_count" }
"#,
        );
        let cell = &expand_cells(&c)[0];
        let a = run_cell(&c, cell, 9, "h").unwrap();
        let b = run_cell(&c, cell, 9, "h").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.streams[&Metric::TreasureMissed].len(), 20);
        assert!(a.streams[&Metric::TreasureMissed].iter().all(|&x| x == 0.0 || x == 1.0));
    }

    #[test]
    fn value_learners_record_start_values() {
        let c = ExperimentConfig::from_toml(
            r#"
name = "v"
episodes = 50
seeds = [0]
metrics = ["start_value"]
[env]
name = "random_acyclic"
layers = 4
width = 3
actions = 2
[[learners]]
label = "tdc"
algorithm = "tdc"
[[learners]]
label = "td1n"
algorithm = "td_one_over_n"
[[learners]]
label = "chunked"
algorithm = "chunked_td_v"
alpha = [0.1]
model = { name = "tabular_count" }
"#,
        )
        .unwrap();
        for cell in expand_cells(&c) {
            let r = run_cell(&c, &cell, 0, "h").unwrap();
            let s = &r.streams[&Metric::StartValue];
            assert!(s.iter().all(|v| v.is_finite()), "{}", cell.label);
            assert!(s.iter().any(|&v| v != 0.0), "{}", cell.label);
        }
    }
}
