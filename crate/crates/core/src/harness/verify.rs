//! Built-in correctness checks: online learners against the offline
//! oracles, degenerate-model limits, sampled chunking, and the network
//! gradients. Shared by `chunktd verify` and the acceptance tests.

use std::collections::HashMap;
use std::fmt;
use std::time::{Duration, Instant};

use rand::Rng;

use crate::env::{generate_acyclic_mdp, RandomAcyclicMdp};
use crate::learn::{
    chunked_expected_sarsa_step, chunked_sarsa_step, chunked_td_v_step, Bootstrap, QStep, TabularQLearner,
    TdOneOverN, Tdc, ValueLearner,
};
use crate::mdp::{rollout_with, Action, ActionDist, Discount, Environment, Episode, MdpError, Percept, Policy, State};
use crate::model::{ConstantModel, FnModel};
use crate::nn::{HeadSpec, Mlp, MlpSpec, Workspace};
use crate::oracle::{
    lambda_return_ledger, lambda_return_q_ledger, offline_chunked_ledger, offline_chunked_q_ledger,
    offline_expected_lambda_returns, offline_lambda_returns, offline_sarsa_lambda_returns, offline_td1n_ledger,
    offline_tdc_ledger, policy_marginal_schedule, sample_state_chunked_targets, sarsa_schedule, tdc_backward_lambdas,
    LambdaSchedule, PairStats, Sa, UpdateLedger,
};
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// Smoke-test sizes.
    Quick,
    /// The full trial counts.
    Full,
}

impl Scale {
    fn pick(self, quick: usize, full: usize) -> usize {
        match self {
            Scale::Quick => quick,
            Scale::Full => full,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {} ({:.2}s)", self.name, self.detail, self.elapsed.as_secs_f64())
    }
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<String, String>) -> Check {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    Check { name, passed, detail, elapsed: start.elapsed() }
}

pub fn run_all(scale: Scale) -> Vec<Check> {
    vec![
        lambda_return_equivalence(scale.pick(10, 100)),
        degenerate_models(scale.pick(10, 100)),
        sutton_singh_equivalence(scale.pick(10, 100)),
        sampled_chunking(scale.pick(2_000, 100_000), 20),
        gradient_check(scale.pick(5, 50)),
    ]
}

// ---- fixtures -------------------------------------------------------------

/// Uniform draw in `[0, 1)` keyed by `tags`.
fn hashed_unit(tags: &[u64]) -> f64 {
    (rng::mix(tags) >> 11) as f64 / (1u64 << 53) as f64
}

fn state_tags(seed: u64, kind: u64, s: &State, extra: &[u64]) -> Vec<u64> {
    let mut t = vec![seed, kind];
    t.extend(s.components().iter().map(|&c| c as u64));
    t.push(u64::MAX);
    t.extend_from_slice(extra);
    t
}

/// Random but fixed `P̂(x' | x, a)` in `[0, 1)`.
fn hashed_model(seed: u64) -> FnModel<impl Fn(&State, Action, &State) -> f64> {
    FnModel(move |x: &State, a: Action, y: &State| {
        let mut t = state_tags(seed, 1, x, &[a.0 as u64]);
        t.extend(y.components().iter().map(|&c| c as u64));
        hashed_unit(&t)
    })
}

fn hashed_value(seed: u64, s: &State) -> f64 {
    2.0 * hashed_unit(&state_tags(seed, 2, s, &[])) - 1.0
}

fn hashed_q(seed: u64, s: &State, a: Action) -> f64 {
    2.0 * hashed_unit(&state_tags(seed, 3, s, &[a.0 as u64])) - 1.0
}

/// Multiples of 1/16 in `[-4, 4]`: sums of a few of these are exact.
fn dyadic(u: f64) -> f64 {
    ((u * 128.0).floor() - 64.0) / 16.0
}

/// A fixed random distribution per state; `deterministic` puts all mass on
/// one hashed action.
struct HashedPolicy {
    seed: u64,
    deterministic: bool,
}

impl Policy<f64> for HashedPolicy {
    fn distribution(&self, state: &State, legal: usize) -> Result<ActionDist<f64>, MdpError> {
        if self.deterministic {
            let a = (hashed_unit(&state_tags(self.seed, 4, state, &[])) * legal as f64) as usize;
            return Ok(ActionDist::point(legal, Action(a.min(legal - 1))));
        }
        let w: Vec<f64> =
            (0..legal).map(|a| 0.05 + hashed_unit(&state_tags(self.seed, 5, state, &[a as u64]))).collect();
        let total: f64 = w.iter().sum();
        Ok(ActionDist(w.iter().map(|x| x / total).collect()))
    }
}

fn random_mdp(r: &mut StreamRng, reward_scale: f64) -> RandomAcyclicMdp {
    let layers = r.random_range(2..=8);
    let width = r.random_range(1..=6);
    let actions = r.random_range(1..=3);
    generate_acyclic_mdp(r.random(), layers, width, actions, reward_scale).expect("valid parameters")
}

struct Rollout {
    episode: Episode<f64>,
    dists: Vec<ActionDist<f64>>,
}

fn rollout(mdp: &mut RandomAcyclicMdp, policy: &HashedPolicy, r: &mut StreamRng) -> Rollout {
    let episode: Episode<f64> = rollout_with(mdp, policy, r).expect("acyclic episodes terminate");
    let dists = (0..episode.len())
        .map(|t| {
            let s = episode.state(t);
            policy.distribution(s, Environment::<f64>::legal_actions(mdp, s)).expect("legal actions")
        })
        .collect();
    Rollout { episode, dists }
}

fn states_of(ep: &Episode<f64>) -> Vec<State> {
    (0..=ep.len()).map(|t| ep.state(t).clone()).collect()
}

fn value_deltas(before: &HashMap<State, f64>, after: &HashMap<State, f64>) -> UpdateLedger<State, f64> {
    UpdateLedger(after.iter().map(|(s, v)| (s.clone(), v - before.get(s).copied().unwrap_or(0.0))).collect())
}

fn q_deltas(before: &HashMap<(State, Action), f64>, after: &HashMap<(State, Action), f64>) -> UpdateLedger<Sa, f64> {
    UpdateLedger(
        after
            .iter()
            .map(|((s, a), v)| (Sa(s.clone(), *a), v - before.get(&(s.clone(), *a)).copied().unwrap_or(0.0)))
            .collect(),
    )
}

fn prefill_v(learner: &mut ValueLearner<f64>, ep: &Episode<f64>, v: impl Fn(&State) -> f64) {
    for s in states_of(ep).iter().take(ep.len()) {
        learner.table.set(s, v(s));
    }
}

fn prefill_q(learner: &mut TabularQLearner<f64>, ep: &Episode<f64>, actions: usize, q: impl Fn(&State, Action) -> f64) {
    for s in states_of(ep).iter().take(ep.len()) {
        for a in 0..actions {
            learner.table.set(s, Action(a), q(s, Action(a)));
        }
    }
}

fn q_step<'a>(ro: &'a Rollout, t: usize) -> QStep<'a, f64> {
    let ep = &ro.episode;
    let done = t + 1 == ep.len();
    QStep {
        state: ep.state(t),
        action: ep.actions[t],
        reward: ep.reward_after(t),
        reward_vector: None,
        next: ep.state(t + 1),
        done,
        next_action: (!done).then(|| ep.actions[t + 1]),
        next_dist: (!done).then(|| &ro.dists[t + 1]),
    }
}

fn e<E: fmt::Display>(x: E) -> String {
    x.to_string()
}

// ---- λ-return equivalence ---------------------------------------------------

/// Online chunked TD / SARSA / Expected-SARSA episode totals against the
/// offline λ-return updates under the same model-derived schedule, plus the
/// unrolled product-of-probabilities route against the return route.
pub fn lambda_return_equivalence(trials: usize) -> Check {
    timed("lambda-return equivalence", || {
        let mut r = rng::stream(0x5052_4f50, &[]);
        let (mut worst, mut worst_routes) = (0.0f64, 0.0f64);
        for trial in 0..trials {
            let seed = trial as u64;
            let mut mdp = random_mdp(&mut r, 1.0);
            let actions = mdp.params().actions;
            let policy = HashedPolicy { seed, deterministic: false };
            let ro = rollout(&mut mdp, &policy, &mut r);
            let ep = &ro.episode;
            let model = hashed_model(seed);
            let alpha = r.random_range(0.01..1.0);
            let gamma = r.random_range(0.5..=1.0);
            let d = Discount::new(gamma).map_err(e)?;
            let v = |s: &State| hashed_value(seed, s);
            let q = |s: &State, a: Action| hashed_q(seed, s, a);

            // state values
            let mut lv = ValueLearner::new(alpha, d).map_err(e)?;
            prefill_v(&mut lv, ep, v);
            let before = lv.table.snapshot();
            for t in 0..ep.len() {
                let done = t + 1 == ep.len();
                chunked_td_v_step(&mut lv, ep.state(t), ep.reward_after(t), ep.state(t + 1), done, &model, &ro.dists[t])
                    .map_err(e)?;
            }
            let online = value_deltas(&before, &lv.table.snapshot());
            let sched = policy_marginal_schedule(ep, &model, &ro.dists).map_err(e)?;
            let g = offline_lambda_returns(ep, v, &sched, gamma).map_err(e)?;
            let offline = lambda_return_ledger(ep, v, &g, alpha).map_err(e)?;
            worst = worst.max(online.max_abs_diff(&offline));
            let unrolled = offline_chunked_ledger(ep, v, &sched, alpha, gamma).map_err(e)?;
            worst_routes = worst_routes.max(unrolled.max_abs_diff(&offline));

            // SARSA
            let mut lq = TabularQLearner::new(actions, Bootstrap::Sarsa, alpha, d).map_err(e)?;
            prefill_q(&mut lq, ep, actions, q);
            let before = lq.table.snapshot();
            for t in 0..ep.len() {
                chunked_sarsa_step(&mut lq, &q_step(&ro, t), &model).map_err(e)?;
            }
            let online = q_deltas(&before, &lq.table.snapshot());
            let sched = sarsa_schedule(ep, &model, &ro.dists).map_err(e)?;
            let g = offline_sarsa_lambda_returns(ep, q, &sched, gamma).map_err(e)?;
            let offline = lambda_return_q_ledger(ep, q, &g, alpha).map_err(e)?;
            worst = worst.max(online.max_abs_diff(&offline));
            let unrolled = offline_chunked_q_ledger(ep, q, None, &sched, alpha, gamma).map_err(e)?;
            worst_routes = worst_routes.max(unrolled.max_abs_diff(&offline));

            // Expected-SARSA
            let mut lq = TabularQLearner::new(actions, Bootstrap::Expected, alpha, d).map_err(e)?;
            prefill_q(&mut lq, ep, actions, q);
            let before = lq.table.snapshot();
            for t in 0..ep.len() {
                chunked_expected_sarsa_step(&mut lq, &q_step(&ro, t), &model, &ro.dists[t]).map_err(e)?;
            }
            let online = q_deltas(&before, &lq.table.snapshot());
            let sched = policy_marginal_schedule(ep, &model, &ro.dists).map_err(e)?;
            let g = offline_expected_lambda_returns(ep, q, &ro.dists, &sched, gamma).map_err(e)?;
            let offline = lambda_return_q_ledger(ep, q, &g, alpha).map_err(e)?;
            worst = worst.max(online.max_abs_diff(&offline));
            let unrolled = offline_chunked_q_ledger(ep, q, Some(&ro.dists), &sched, alpha, gamma).map_err(e)?;
            worst_routes = worst_routes.max(unrolled.max_abs_diff(&offline));
        }
        let detail = format!(
            "{trials} MDPs x 3 learners, max |online - offline| = {worst:.2e} (< 1e-10), \
             return vs unrolled route = {worst_routes:.2e} (< 1e-12)"
        );
        if worst < 1e-10 && worst_routes < 1e-12 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })
}

// ---- degenerate models ------------------------------------------------------

fn td0_reference(ep: &Episode<f64>, v: &mut HashMap<State, f64>, alpha: f64, gamma: f64) {
    for t in 0..ep.len() {
        let next = if t + 1 == ep.len() { 0.0 } else { v.get(ep.state(t + 1)).copied().unwrap_or(0.0) };
        let cur = v.get(ep.state(t)).copied().unwrap_or(0.0);
        let delta = ep.reward_after(t) + gamma * next - cur;
        v.insert(ep.state(t).clone(), cur + alpha * delta);
    }
}

type QMap = HashMap<(State, Action), f64>;

fn q_get(q: &QMap, s: &State, a: Action) -> f64 {
    q.get(&(s.clone(), a)).copied().unwrap_or(0.0)
}

fn sarsa0_reference(ro: &Rollout, q: &mut QMap, alpha: f64, gamma: f64, expected: bool) {
    let ep = &ro.episode;
    for t in 0..ep.len() {
        let (s, a) = (ep.state(t), ep.actions[t]);
        let boot = if t + 1 == ep.len() {
            0.0
        } else if expected {
            let n = ep.state(t + 1);
            ro.dists[t + 1].probs().iter().enumerate().map(|(b, &p)| p * q_get(q, n, Action(b))).sum()
        } else {
            q_get(q, ep.state(t + 1), ep.actions[t + 1])
        };
        let cur = q_get(q, s, a);
        let delta = ep.reward_after(t) + gamma * boot - cur;
        q.insert((s.clone(), a), cur + alpha * delta);
    }
}

/// First-visit Monte Carlo: `alpha (G_t - V(S_t))` with `γ = 1`.
fn mc_targets(ep: &Episode<f64>) -> Vec<f64> {
    let mut g = vec![0.0; ep.len()];
    let mut acc = 0.0;
    for t in (0..ep.len()).rev() {
        acc += ep.reward_after(t);
        g[t] = acc;
    }
    g
}

fn same_bits(a: &UpdateLedger<State, f64>, b: &HashMap<State, f64>) -> bool {
    a.0.len() == b.len() && a.0.iter().all(|(k, v)| b.get(k).is_some_and(|w| w.to_bits() == v.to_bits()))
}

fn same_bits_q(a: &HashMap<(State, Action), f64>, b: &QMap) -> bool {
    a.iter().all(|(k, v)| q_get(b, &k.0, k.1).to_bits() == v.to_bits())
}

/// `P̂ ≡ 0` reproduces one-step TD / SARSA / Expected-SARSA and `P̂ ≡ 1`
/// with `γ = 1` reproduces first-visit Monte Carlo, both bit for bit.
///
/// The Monte Carlo comparison uses dyadic rewards and values so that the
/// telescoped sum of TD errors is exact in floating point, and a
/// deterministic policy so that the SARSA joint probability and the
/// Expected-SARSA bootstrap coincide with their Monte Carlo counterparts.
pub fn degenerate_models(trials: usize) -> Check {
    timed("degenerate models", || {
        let mut r = rng::stream(0x4445_4745, &[]);
        let mut failures = Vec::new();
        for trial in 0..trials {
            let seed = trial as u64;
            let alpha = r.random_range(0.01..1.0);
            let gamma = r.random_range(0.5..=1.0);

            // P̂ ≡ 0
            let mut mdp = random_mdp(&mut r, 1.0);
            let actions = mdp.params().actions;
            let policy = HashedPolicy { seed, deterministic: false };
            let ro = rollout(&mut mdp, &policy, &mut r);
            let ep = &ro.episode;
            let zero = ConstantModel(0.0);
            let d = Discount::new(gamma).map_err(e)?;
            let v = |s: &State| hashed_value(seed, s);
            let q = |s: &State, a: Action| hashed_q(seed, s, a);

            let mut lv = ValueLearner::new(alpha, d).map_err(e)?;
            prefill_v(&mut lv, ep, v);
            let mut reference = lv.table.snapshot();
            for t in 0..ep.len() {
                let done = t + 1 == ep.len();
                chunked_td_v_step(&mut lv, ep.state(t), ep.reward_after(t), ep.state(t + 1), done, &zero, &ro.dists[t])
                    .map_err(e)?;
            }
            td0_reference(ep, &mut reference, alpha, gamma);
            if lv.table.snapshot() != reference {
                failures.push(format!("TD(0) trial {trial}"));
            }
            for expected in [false, true] {
                let boot = if expected { Bootstrap::Expected } else { Bootstrap::Sarsa };
                let mut lq = TabularQLearner::new(actions, boot, alpha, d).map_err(e)?;
                prefill_q(&mut lq, ep, actions, q);
                let mut reference = lq.table.snapshot();
                for t in 0..ep.len() {
                    let step = q_step(&ro, t);
                    if expected {
                        chunked_expected_sarsa_step(&mut lq, &step, &zero, &ro.dists[t]).map_err(e)?;
                    } else {
                        chunked_sarsa_step(&mut lq, &step, &zero).map_err(e)?;
                    }
                }
                sarsa0_reference(&ro, &mut reference, alpha, gamma, expected);
                if !same_bits_q(&lq.table.snapshot(), &reference) {
                    failures.push(format!("{} trial {trial}", if expected { "Expected-SARSA(0)" } else { "SARSA(0)" }));
                }
            }

            // P̂ ≡ 1, γ = 1
            let mut mdp = random_mdp(&mut r, 1.0);
            let actions = mdp.params().actions;
            let policy = HashedPolicy { seed, deterministic: true };
            let ro = rollout(&mut mdp, &policy, &mut r);
            let ep = &ro.episode;
            let ep = &dyadic_episode(ep);
            let ro = Rollout { episode: ep.clone(), dists: ro.dists };
            let one = ConstantModel(1.0);
            let alpha = 0.25;
            let d = Discount::undiscounted();
            let v = |s: &State| dyadic(hashed_unit(&state_tags(seed, 6, s, &[])));
            let q = |s: &State, a: Action| dyadic(hashed_unit(&state_tags(seed, 7, s, &[a.0 as u64])));
            let g = mc_targets(ep);

            let mut lv = ValueLearner::new(alpha, d).map_err(e)?;
            prefill_v(&mut lv, ep, v);
            for t in 0..ep.len() {
                let done = t + 1 == ep.len();
                chunked_td_v_step(&mut lv, ep.state(t), ep.reward_after(t), ep.state(t + 1), done, &one, &ro.dists[t])
                    .map_err(e)?;
            }
            let mc: HashMap<State, f64> =
                (0..ep.len()).map(|t| (ep.state(t).clone(), v(ep.state(t)) + alpha * (g[t] - v(ep.state(t))))).collect();
            if !same_bits(&UpdateLedger(lv.table.snapshot()), &mc) {
                failures.push(format!("MC value trial {trial}"));
            }
            for expected in [false, true] {
                let boot = if expected { Bootstrap::Expected } else { Bootstrap::Sarsa };
                let mut lq = TabularQLearner::new(actions, boot, alpha, d).map_err(e)?;
                prefill_q(&mut lq, ep, actions, q);
                let mut mc = lq.table.snapshot();
                for t in 0..ep.len() {
                    let step = q_step(&ro, t);
                    if expected {
                        chunked_expected_sarsa_step(&mut lq, &step, &one, &ro.dists[t]).map_err(e)?;
                    } else {
                        chunked_sarsa_step(&mut lq, &step, &one).map_err(e)?;
                    }
                }
                for t in 0..ep.len() {
                    let (s, a) = (ep.state(t), ep.actions[t]);
                    mc.insert((s.clone(), a), q(s, a) + alpha * (g[t] - q(s, a)));
                }
                if !same_bits_q(&lq.table.snapshot(), &mc) {
                    failures.push(format!("MC {} trial {trial}", if expected { "Expected-SARSA" } else { "SARSA" }));
                }
            }
        }
        if failures.is_empty() {
            Ok(format!("{trials} MDPs: P=0 matches one-step TD/SARSA/ES, P=1 matches first-visit MC, bit-identical"))
        } else {
            Err(format!("{} mismatches, first: {}", failures.len(), failures[0]))
        }
    })
}

/// The same trajectory with rewards snapped to multiples of 1/16.
fn dyadic_episode(ep: &Episode<f64>) -> Episode<f64> {
    let percepts = (0..=ep.len())
        .map(|t| {
            let r = if t == 0 { 0.0 } else { dyadic(hashed_unit(&[0x5245_5744, t as u64, ep.reward_after(t - 1).to_bits()])) };
            Percept::new(r, ep.state(t).clone())
        })
        .collect();
    Episode::new(percepts, ep.actions.clone(), true).expect("same shape")
}

// ---- TD(1/n) and TDC ----------------------------------------------------------

/// Pair counts after an episode with pair values from before it.
struct PairSnapshot {
    counts: HashMap<(Option<State>, State), u64>,
    values: HashMap<(Option<State>, State), f64>,
}

impl PairStats<f64> for PairSnapshot {
    fn pair_count(&self, next: Option<&State>, s: &State) -> u64 {
        self.counts.get(&(next.cloned(), s.clone())).copied().unwrap_or(0)
    }

    fn pair_value(&self, next: Option<&State>, s: &State) -> f64 {
        self.values.get(&(next.cloned(), s.clone())).copied().unwrap_or(0.0)
    }
}

fn transitions(ep: &Episode<f64>) -> Vec<(Option<State>, State)> {
    (0..ep.len())
        .map(|t| ((t + 1 < ep.len()).then(|| ep.state(t + 1).clone()), ep.state(t).clone()))
        .collect()
}

/// TD(1/n) and TDC episode totals against their offline ledgers over
/// several episodes per MDP (so counts exceed one), and the TDC ledger
/// with up-to-date pair values against the λ-return ledger under the
/// backward-model schedule `λ_t = n(S_t, S_{t-1}) / n(S_t)`.
pub fn sutton_singh_equivalence(trials: usize) -> Check {
    timed("TD(1/n) and TDC equivalence", || {
        let mut r = rng::stream(0x5453_494e, &[]);
        let (mut worst, mut worst_backward, mut episodes) = (0.0f64, 0.0f64, 0usize);
        for trial in 0..trials {
            let seed = trial as u64;
            let mut mdp = random_mdp(&mut r, 1.0);
            let policy = HashedPolicy { seed, deterministic: false };
            let mut td1n = TdOneOverN::<f64>::new();
            let mut tdc = Tdc::<f64>::new();
            for _ in 0..6 {
                let ro = rollout(&mut mdp, &policy, &mut r);
                let ep = &ro.episode;
                episodes += 1;

                let v0: HashMap<State, f64> = states_of(ep).into_iter().map(|s| (s.clone(), td1n.value(&s))).collect();
                td1n.begin_episode();
                for t in 0..ep.len() {
                    td1n.step(ep.state(t), ep.reward_after(t), ep.state(t + 1), t + 1 == ep.len()).map_err(e)?;
                }
                let online = UpdateLedger(
                    (0..ep.len()).map(|t| (ep.state(t).clone(), td1n.value(ep.state(t)) - v0[ep.state(t)])).collect(),
                );
                let offline = offline_td1n_ledger(ep, |s| v0[s], |s| td1n.state.visits_of(s)).map_err(e)?;
                worst = worst.max(online.max_abs_diff(&offline));

                let v0: HashMap<State, f64> = states_of(ep).into_iter().map(|s| (s.clone(), tdc.value(&s))).collect();
                let pv0: HashMap<_, _> = transitions(ep)
                    .into_iter()
                    .map(|(n, s)| {
                        let pv = tdc.state.pair_value(n.as_ref(), &s);
                        ((n, s), pv)
                    })
                    .collect();
                tdc.begin_episode();
                for t in 0..ep.len() {
                    tdc.step(ep.state(t), ep.reward_after(t), ep.state(t + 1), t + 1 == ep.len()).map_err(e)?;
                }
                let online = UpdateLedger(
                    (0..ep.len()).map(|t| (ep.state(t).clone(), tdc.value(ep.state(t)) - v0[ep.state(t)])).collect(),
                );
                let counts: HashMap<_, _> = transitions(ep)
                    .into_iter()
                    .map(|(n, s)| {
                        let c = tdc.state.pair_count(n.as_ref(), &s);
                        ((n, s), c)
                    })
                    .collect();
                let snap = PairSnapshot { counts: counts.clone(), values: pv0 };
                let visits = |s: &State| tdc.state.visits_of(s);
                let offline = offline_tdc_ledger(ep, |s| v0[s], &snap, visits).map_err(e)?;
                worst = worst.max(online.max_abs_diff(&offline));

                // up-to-date pair values: V(S', S) = V(S')
                let fresh = PairSnapshot {
                    counts,
                    values: transitions(ep)
                        .into_iter()
                        .map(|(n, s)| {
                            let v = n.as_ref().map_or(0.0, |x| v0[x]);
                            ((n, s), v)
                        })
                        .collect(),
                };
                let tdc_fresh = offline_tdc_ledger(ep, |s| v0[s], &fresh, visits).map_err(e)?;
                let lambdas = tdc_backward_lambdas(ep, &fresh, visits);
                let g = offline_lambda_returns(ep, |s| v0[s], &LambdaSchedule(lambdas), 1.0).map_err(e)?;
                let ret = lambda_return_ledger(ep, |s| v0[s], &g, 1.0).map_err(e)?;
                let backward =
                    UpdateLedger(ret.0.into_iter().map(|(s, u)| (s.clone(), u / visits(&s) as f64)).collect());
                worst_backward = worst_backward.max(tdc_fresh.max_abs_diff(&backward));
            }
        }
        let detail = format!(
            "{episodes} episodes over {trials} MDPs, max |online - offline| = {worst:.2e} (< 1e-10), \
             TDC vs backward-model λ-return = {worst_backward:.2e} (< 1e-12)"
        );
        if worst < 1e-10 && worst_backward < 1e-12 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })
}

// ---- sampled chunking ---------------------------------------------------------

/// A chain with one surprising transition out of `x_k`.
fn surprise_chain(len: usize, k: usize) -> (Episode<f64>, LambdaSchedule<f64>) {
    let percepts = (0..=len)
        .map(|t| Percept::new(if t == 0 { 0.0 } else { 0.25 * t as f64 }, State::new(&[t as i32])))
        .collect();
    let ep = Episode::new(percepts, vec![Action(0); len], true).expect("chain");
    let lambdas = (0..len).map(|t| if t == k { 0.1 } else { 1.0 }).collect();
    (ep, LambdaSchedule(lambdas))
}

/// Mean of `n_samples` sampled chunked targets against the exact λ-return,
/// per state, within three standard errors. States whose target is
/// deterministic (zero standard error) must agree to round-off (1e-9).
pub fn sampled_chunking(n_samples: usize, episodes: usize) -> Check {
    timed("sampled chunking expectation", || {
        let mut r = rng::stream(0x4348_554e, &[]);
        let mut cases: Vec<(String, Episode<f64>, LambdaSchedule<f64>, f64, u64)> = Vec::new();
        let (chain, sched) = surprise_chain(8, 4);
        cases.push(("surprise chain".into(), chain, sched, 1.0, 0));
        for i in 0..episodes {
            let seed = 100 + i as u64;
            let mut mdp = random_mdp(&mut r, 1.0);
            let policy = HashedPolicy { seed, deterministic: false };
            let ro = rollout(&mut mdp, &policy, &mut r);
            let sched = policy_marginal_schedule(&ro.episode, &hashed_model(seed), &ro.dists).map_err(e)?;
            let gamma = r.random_range(0.8..=1.0);
            cases.push((format!("episode {i}"), ro.episode, sched, gamma, seed));
        }
        let (mut states, mut worst_z) = (0usize, 0.0f64);
        let mut early_bootstrap = 0.0;
        for (name, ep, sched, gamma, seed) in &cases {
            let v = |s: &State| if *seed == 0 { 1.0 + s.component(0) as f64 } else { hashed_value(*seed, s) };
            let exact = offline_lambda_returns(ep, v, sched, *gamma).map_err(e)?;
            let sampled = sample_state_chunked_targets(ep, v, sched, *gamma, &mut r, n_samples).map_err(e)?;
            for (t, (x, s)) in exact.iter().zip(&sampled).enumerate() {
                states += 1;
                let err = (s.mean - x).abs();
                if s.std_err == 0.0 {
                    if err > 1e-9 {
                        return Err(format!("{name}, t = {t}: deterministic target off by {err:.2e}"));
                    }
                    continue;
                }
                let z = err / s.std_err;
                worst_z = worst_z.max(z);
                if z > 3.0 {
                    return Err(format!("{name}, t = {t}: sampled {:.6} vs exact {x:.6} ({z:.2} SE)", s.mean));
                }
            }
            if *seed == 0 {
                // states before the surprise bootstrap from V(x_4) 90% of the time
                early_bootstrap = exact[0];
            }
        }
        Ok(format!(
            "{} episodes, {states} states, {n_samples} samples each, worst deviation {worst_z:.2} SE (<= 3); \
             surprise-chain G_0 = {early_bootstrap:.4}",
            cases.len()
        ))
    })
}

// ---- gradient check -----------------------------------------------------------

/// Analytic against central finite-difference gradients of the batch loss
/// on random small networks: per parameter
/// `|g - g_fd| / max(|g|, |g_fd|, 1e-6) < 1e-5`.
pub fn gradient_check(trials: usize) -> Check {
    timed("network gradient check", || {
        let mut r = rng::stream(0x4752_4144, &[]);
        let mut worst = 0.0f64;
        let mut params = 0usize;
        for trial in 0..trials {
            let input = r.random_range(1..=5);
            let hidden: Vec<usize> = (0..r.random_range(1..=3)).map(|_| r.random_range(1..=6)).collect();
            let heads: Vec<HeadSpec> = (0..r.random_range(1..=3))
                .map(|_| if r.random_bool(0.5) { HeadSpec::Bernoulli } else { HeadSpec::Categorical(r.random_range(2..=5)) })
                .collect();
            let spec = MlpSpec { input, hidden, heads: heads.clone() };
            let mut net = Mlp::<f64>::new(spec, &mut r).map_err(e)?;
            for p in net.params_mut() {
                *p += r.random_range(-0.5..0.5);
            }
            let batch = r.random_range(1..=4);
            let x: Vec<f64> = (0..batch * input).map(|_| r.random_range(-2.0..2.0)).collect();
            let targets: Vec<u32> =
                (0..batch).flat_map(|_| heads.iter().map(|h| r.random_range(0..h.classes() as u32)).collect::<Vec<_>>()).collect();
            let mut grad = Vec::new();
            let mut ws = Workspace::default();
            net.loss_and_grad(&x, &targets, &mut grad, &mut ws).map_err(e)?;
            let h = 1e-5;
            for i in 0..grad.len() {
                let orig = net.params()[i];
                net.params_mut()[i] = orig + h;
                let up = net.loss(&x, &targets).map_err(e)?;
                net.params_mut()[i] = orig - h;
                let down = net.loss(&x, &targets).map_err(e)?;
                net.params_mut()[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6);
                if rel > worst {
                    worst = rel;
                }
                if rel >= 1e-5 {
                    return Err(format!("trial {trial}, parameter {i}: analytic {} vs numeric {fd} (rel {rel:.2e})", grad[i]));
                }
                params += 1;
            }
        }
        Ok(format!("{trials} networks, {params} parameters, worst relative error {worst:.2e} (< 1e-5)"))
    })
}
