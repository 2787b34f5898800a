//! Offline reference computations for returns and per-episode updates.
//!
//! Nothing here touches the learner code: every quantity is recomputed from
//! the episode, a frozen value function and the λ schedule, so agreement
//! with the online learners is a real cross-check.

use std::collections::HashMap;
use std::hash::Hash;

use rand::Rng;
use thiserror::Error;

use crate::mdp::{Action, ActionDist, Episode, State};
use crate::model::LambdaSource;
use crate::num::{is_probability, Scalar};
use crate::rng::StreamRng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("state {0} repeats within the episode")]
    Repeated(State),
    #[error("lambda {0} is outside [0, 1]")]
    NotAProbability(f64),
    #[error("at least one sample is required")]
    NoSamples,
    #[error("model: {0}")]
    Model(String),
}

/// `lambdas[t]` is `λ_t`, the weight on continuing past `S_t` rather than
/// bootstrapping from it. `lambdas[0]` has no effect.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSchedule<T>(pub Vec<T>);

impl<T: Scalar> LambdaSchedule<T> {
    pub fn constant(len: usize, lambda: T) -> Self {
        LambdaSchedule(vec![lambda; len])
    }

    fn check(&self, len: usize) -> Result<&[T], OracleError> {
        if self.0.len() != len {
            return Err(OracleError::LengthMismatch { expected: len, got: self.0.len() });
        }
        if let Some(&l) = self.0.iter().find(|&&l| !is_probability(l)) {
            return Err(OracleError::NotAProbability(l.to_f64_lossy()));
        }
        Ok(&self.0)
    }

    /// `λ_{t+1}`, or 0 past the end (the terminal state has value 0, so
    /// the choice does not matter there).
    fn next(&self, t: usize) -> T {
        self.0.get(t + 1).copied().unwrap_or_else(T::zero)
    }
}

/// Total update per state (or state-action) over one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateLedger<K: Eq + Hash, T>(pub HashMap<K, T>);

impl<K: Eq + Hash + Clone, T: Scalar> UpdateLedger<K, T> {
    fn from_pairs(pairs: impl IntoIterator<Item = (K, T)>) -> Result<Self, OracleError>
    where
        K: Into<State> + Clone,
    {
        let mut map = HashMap::new();
        for (k, v) in pairs {
            if map.insert(k.clone(), v).is_some() {
                return Err(OracleError::Repeated(k.into()));
            }
        }
        Ok(UpdateLedger(map))
    }

    pub fn get(&self, k: &K) -> T {
        self.0.get(k).copied().unwrap_or_else(T::zero)
    }

    /// Largest absolute difference over the union of keys.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.0
            .keys()
            .chain(other.0.keys())
            .map(|k| (self.get(k) - other.get(k)).abs())
            .fold(T::zero(), T::max)
    }
}

/// State-action ledger key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sa(pub State, pub Action);

impl From<Sa> for State {
    fn from(k: Sa) -> State {
        k.0
    }
}

fn check_acyclic<T: Scalar>(episode: &Episode<T>) -> Result<(), OracleError> {
    let mut seen = std::collections::HashSet::new();
    for t in 0..episode.len() {
        if !seen.insert(episode.state(t)) {
            return Err(OracleError::Repeated(episode.state(t).clone()));
        }
    }
    Ok(())
}

/// `V(S_t)` for `t = 0..=T`, with the final (terminal) entry forced to 0.
fn state_values<T: Scalar>(episode: &Episode<T>, v: impl Fn(&State) -> T) -> Vec<T> {
    let n = episode.len();
    (0..=n).map(|t| if t == n { T::zero() } else { v(episode.state(t)) }).collect()
}

/// `Q(S_t, A_t)` for `t = 0..=T`, terminal entry 0.
fn action_values<T: Scalar>(episode: &Episode<T>, q: impl Fn(&State, Action) -> T) -> Vec<T> {
    let n = episode.len();
    (0..=n)
        .map(|t| if t == n { T::zero() } else { q(episode.state(t), episode.actions[t]) })
        .collect()
}

/// λ-returns by backward recursion:
/// `G_t = R_{t+1} + γ λ_{t+1} G_{t+1} + (1 - λ_{t+1}) γ V(S_{t+1})`.
pub fn offline_lambda_returns<T: Scalar>(
    episode: &Episode<T>,
    values: impl Fn(&State) -> T,
    schedule: &LambdaSchedule<T>,
    gamma: T,
) -> Result<Vec<T>, OracleError> {
    schedule.check(episode.len())?;
    let v = state_values(episode, values);
    Ok(eq4_recursion(episode, &v, schedule, gamma))
}

fn eq4_recursion<T: Scalar>(episode: &Episode<T>, boot: &[T], schedule: &LambdaSchedule<T>, gamma: T) -> Vec<T> {
    let n = episode.len();
    let mut g = vec![T::zero(); n];
    let mut next = T::zero();
    for t in (0..n).rev() {
        let l = schedule.next(t);
        g[t] = episode.reward_after(t) + gamma * l * next + (T::one() - l) * gamma * boot[t + 1];
        next = g[t];
    }
    g
}

/// SARSA λ-returns: as [`offline_lambda_returns`] with `Q(S_{t+1}, A_{t+1})`
/// in place of `V(S_{t+1})`.
pub fn offline_sarsa_lambda_returns<T: Scalar>(
    episode: &Episode<T>,
    q: impl Fn(&State, Action) -> T,
    schedule: &LambdaSchedule<T>,
    gamma: T,
) -> Result<Vec<T>, OracleError> {
    schedule.check(episode.len())?;
    let b = action_values(episode, q);
    Ok(eq4_recursion(episode, &b, schedule, gamma))
}

/// Expected-SARSA λ-returns:
/// `G_t = R_{t+1} + γ V̄(S_{t+1}) + γ λ_{t+1} (G_{t+1} - Q(S_{t+1}, A_{t+1}))`
/// with `V̄(s) = sum_a pi(a|s) Q(s, a)`; `dists[t]` is `pi(. | S_t)`.
pub fn offline_expected_lambda_returns<T: Scalar>(
    episode: &Episode<T>,
    q: impl Fn(&State, Action) -> T,
    dists: &[ActionDist<T>],
    schedule: &LambdaSchedule<T>,
    gamma: T,
) -> Result<Vec<T>, OracleError> {
    let n = episode.len();
    schedule.check(n)?;
    if dists.len() != n {
        return Err(OracleError::LengthMismatch { expected: n, got: dists.len() });
    }
    let taken = action_values(episode, &q);
    let expected = expected_values(episode, &q, dists);
    let mut g = vec![T::zero(); n];
    let mut next = T::zero();
    for t in (0..n).rev() {
        let l = schedule.next(t);
        g[t] = episode.reward_after(t) + gamma * expected[t + 1] + gamma * l * (next - taken[t + 1]);
        next = g[t];
    }
    Ok(g)
}

fn expected_values<T: Scalar>(
    episode: &Episode<T>,
    q: impl Fn(&State, Action) -> T,
    dists: &[ActionDist<T>],
) -> Vec<T> {
    let n = episode.len();
    (0..=n)
        .map(|t| {
            if t == n {
                return T::zero();
            }
            let s = episode.state(t);
            let mut total = T::zero();
            for (a, &p) in dists[t].probs().iter().enumerate() {
                total += p * q(s, Action(a));
            }
            total
        })
        .collect()
}

/// `alpha (G_t - V(S_t))` per state.
pub fn lambda_return_ledger<T: Scalar>(
    episode: &Episode<T>,
    values: impl Fn(&State) -> T,
    returns: &[T],
    alpha: T,
) -> Result<UpdateLedger<State, T>, OracleError> {
    if returns.len() != episode.len() {
        return Err(OracleError::LengthMismatch { expected: episode.len(), got: returns.len() });
    }
    UpdateLedger::from_pairs(
        returns.iter().enumerate().map(|(t, &g)| (episode.state(t).clone(), alpha * (g - values(episode.state(t))))),
    )
}

/// `alpha (G_t - Q(S_t, A_t))` per state-action.
pub fn lambda_return_q_ledger<T: Scalar>(
    episode: &Episode<T>,
    q: impl Fn(&State, Action) -> T,
    returns: &[T],
    alpha: T,
) -> Result<UpdateLedger<Sa, T>, OracleError> {
    if returns.len() != episode.len() {
        return Err(OracleError::LengthMismatch { expected: episode.len(), got: returns.len() });
    }
    UpdateLedger::from_pairs(returns.iter().enumerate().map(|(t, &g)| {
        let (s, a) = (episode.state(t), episode.actions[t]);
        (Sa(s.clone(), a), alpha * (g - q(s, a)))
    }))
}

/// `u_t = alpha sum_{k >= t} γ^{k-t} δ_k prod_{i=t+1}^{k} λ_i`, evaluated
/// term by term (quadratic in the episode length).
fn unrolled<T: Scalar>(deltas: &[T], lambdas: &[T], gamma: T, alpha: T) -> Vec<T> {
    let n = deltas.len();
    (0..n)
        .map(|t| {
            let mut total = T::zero();
            for (k, &d) in deltas.iter().enumerate().skip(t) {
                let mut w = T::one();
                for &l in &lambdas[t + 1..=k] {
                    w = w * gamma * l;
                }
                total += w * d;
            }
            alpha * total
        })
        .collect()
}

/// Per-state updates of chunked TD from the unrolled product-of-probability
/// sum; `schedule` would typically come from [`policy_marginal_schedule`].
pub fn offline_chunked_ledger<T: Scalar>(
    episode: &Episode<T>,
    values: impl Fn(&State) -> T,
    schedule: &LambdaSchedule<T>,
    alpha: T,
    gamma: T,
) -> Result<UpdateLedger<State, T>, OracleError> {
    check_acyclic(episode)?;
    let lambdas = schedule.check(episode.len())?;
    let v = state_values(episode, values);
    let deltas: Vec<T> = (0..episode.len()).map(|t| episode.reward_after(t) + gamma * v[t + 1] - v[t]).collect();
    let u = unrolled(&deltas, lambdas, gamma, alpha);
    UpdateLedger::from_pairs((0..episode.len()).map(|t| (episode.state(t).clone(), u[t])))
}

/// Unrolled ledger for SARSA-style TD errors; `dists` switches to the
/// expected bootstrap `sum_a pi(a|S_{t+1}) Q(S_{t+1}, a)`.
pub fn offline_chunked_q_ledger<T: Scalar>(
    episode: &Episode<T>,
    q: impl Fn(&State, Action) -> T,
    dists: Option<&[ActionDist<T>]>,
    schedule: &LambdaSchedule<T>,
    alpha: T,
    gamma: T,
) -> Result<UpdateLedger<Sa, T>, OracleError> {
    let n = episode.len();
    let lambdas = schedule.check(n)?;
    let taken = action_values(episode, &q);
    let boot = match dists {
        None => taken.clone(),
        Some(d) => {
            if d.len() != n {
                return Err(OracleError::LengthMismatch { expected: n, got: d.len() });
            }
            expected_values(episode, &q, d)
        }
    };
    let deltas: Vec<T> = (0..n).map(|t| episode.reward_after(t) + gamma * boot[t + 1] - taken[t]).collect();
    let u = unrolled(&deltas, lambdas, gamma, alpha);
    UpdateLedger::from_pairs((0..n).map(|t| (Sa(episode.state(t).clone(), episode.actions[t]), u[t])))
}

fn model_prob<T: Scalar, M: LambdaSource<T> + ?Sized>(
    model: &M,
    x: &State,
    a: Action,
    next: &State,
) -> Result<T, OracleError> {
    model.predict(x, a, next).map(|o| o.joint).map_err(|e| OracleError::Model(e.to_string()))
}

/// `lambdas[t] = sum_a pi(a | x_t) P̂(x_{t+1} | x_t, a)` with
/// `dists[t] = pi(. | x_t)`: the probability of the transition out of `S_t`.
pub fn policy_marginal_schedule<T: Scalar, M: LambdaSource<T> + ?Sized>(
    episode: &Episode<T>,
    model: &M,
    dists: &[ActionDist<T>],
) -> Result<LambdaSchedule<T>, OracleError> {
    let n = episode.len();
    if dists.len() != n {
        return Err(OracleError::LengthMismatch { expected: n, got: dists.len() });
    }
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let (x, y) = (episode.state(t), episode.state(t + 1));
        let mut p = T::zero();
        for (a, &w) in dists[t].probs().iter().enumerate() {
            if w > T::zero() {
                p += w * model_prob(model, x, Action(a), y)?;
            }
        }
        out.push(p.min(T::one()));
    }
    Ok(LambdaSchedule(out))
}

/// `λ_t = P̂(x_{t+1} | x_t, a_t) pi(a_{t+1} | x_{t+1})`, the policy factor
/// being 1 on the final transition.
pub fn sarsa_schedule<T: Scalar, M: LambdaSource<T> + ?Sized>(
    episode: &Episode<T>,
    model: &M,
    dists: &[ActionDist<T>],
) -> Result<LambdaSchedule<T>, OracleError> {
    let n = episode.len();
    if dists.len() != n {
        return Err(OracleError::LengthMismatch { expected: n, got: dists.len() });
    }
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let p = model_prob(model, episode.state(t), episode.actions[t], episode.state(t + 1))?;
        let pi = if t + 1 < n { dists[t + 1].prob(episode.actions[t + 1]) } else { T::one() };
        out.push(p * pi);
    }
    Ok(LambdaSchedule(out))
}

/// Empirical mean and standard error of a sampled target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledTarget {
    pub mean: f64,
    pub std_err: f64,
}

/// Monte Carlo chunking: each sample independently drops every interior
/// point `t` with probability `λ_t` (first and terminal points are always
/// kept); point `t`'s target sums the discounted rewards up to the next kept
/// point `j` and bootstraps from `boot[j]`. `boot` has one entry per point
/// including the terminal one, which should be 0.
pub fn sample_chunked_targets<T: Scalar>(
    rewards: &[T],
    boot: &[T],
    schedule: &LambdaSchedule<T>,
    gamma: T,
    rng: &mut StreamRng,
    n_samples: usize,
) -> Result<Vec<SampledTarget>, OracleError> {
    let n = rewards.len();
    if n_samples == 0 {
        return Err(OracleError::NoSamples);
    }
    if boot.len() != n + 1 {
        return Err(OracleError::LengthMismatch { expected: n + 1, got: boot.len() });
    }
    let lambdas: Vec<f64> = schedule.check(n)?.iter().map(|l| l.to_f64_lossy()).collect();
    let r: Vec<f64> = rewards.iter().map(|x| x.to_f64_lossy()).collect();
    let b: Vec<f64> = boot.iter().map(|x| x.to_f64_lossy()).collect();
    let g = gamma.to_f64_lossy();
    let mut sum = vec![0.0; n];
    let mut sq = vec![0.0; n];
    let mut kept = vec![true; n + 1];
    for _ in 0..n_samples {
        for t in 1..n {
            kept[t] = rng.random::<f64>() >= lambdas[t];
        }
        let mut after = 0.0;
        for t in (0..n).rev() {
            let cont = if kept[t + 1] { b[t + 1] } else { after };
            let target = r[t] + g * cont;
            sum[t] += target;
            sq[t] += target * target;
            after = target;
        }
    }
    let m = n_samples as f64;
    Ok((0..n)
        .map(|t| {
            let mean = sum[t] / m;
            let var = if n_samples > 1 { ((sq[t] - m * mean * mean) / (m - 1.0)).max(0.0) } else { 0.0 };
            SampledTarget { mean, std_err: (var / m).sqrt() }
        })
        .collect())
}

/// State chunking on an episode: bootstraps from `V(S_j)`.
pub fn sample_state_chunked_targets<T: Scalar>(
    episode: &Episode<T>,
    values: impl Fn(&State) -> T,
    schedule: &LambdaSchedule<T>,
    gamma: T,
    rng: &mut StreamRng,
    n_samples: usize,
) -> Result<Vec<SampledTarget>, OracleError> {
    let r: Vec<T> = episode.rewards().collect();
    sample_chunked_targets(&r, &state_values(episode, values), schedule, gamma, rng, n_samples)
}

/// State-action chunking: `(s_t, a_t)` is dropped with the SARSA joint
/// probability and targets bootstrap from `Q(S_j, A_j)`.
pub fn sample_sarsa_chunked_targets<T: Scalar>(
    episode: &Episode<T>,
    q: impl Fn(&State, Action) -> T,
    schedule: &LambdaSchedule<T>,
    gamma: T,
    rng: &mut StreamRng,
    n_samples: usize,
) -> Result<Vec<SampledTarget>, OracleError> {
    let r: Vec<T> = episode.rewards().collect();
    sample_chunked_targets(&r, &action_values(episode, q), schedule, gamma, rng, n_samples)
}

/// TD(1/n) total updates, `u_t = sum_k δ_k prod_{i=t}^{k} 1/n(S_i)`, with
/// `counts` the visit counts after the episode (undiscounted).
pub fn offline_td1n_ledger<T: Scalar>(
    episode: &Episode<T>,
    values: impl Fn(&State) -> T,
    counts: impl Fn(&State) -> u64,
) -> Result<UpdateLedger<State, T>, OracleError> {
    check_acyclic(episode)?;
    let n = episode.len();
    let v = state_values(episode, values);
    let deltas: Vec<T> = (0..n).map(|t| episode.reward_after(t) + v[t + 1] - v[t]).collect();
    let inv: Vec<T> = (0..n).map(|t| T::one() / T::lit(counts(episode.state(t)) as f64)).collect();
    UpdateLedger::from_pairs((0..n).map(|t| {
        let mut total = T::zero();
        for k in t..n {
            let w = inv[t..=k].iter().fold(T::one(), |acc, &l| acc * l);
            total += deltas[k] * w;
        }
        (episode.state(t).clone(), total)
    }))
}

/// Pairwise statistics TDC keeps per transition; `None` is a terminal
/// successor.
pub trait PairStats<T> {
    fn pair_count(&self, next: Option<&State>, s: &State) -> u64;
    fn pair_value(&self, next: Option<&State>, s: &State) -> T;
}

/// TDC total updates before the end-of-episode refresh:
/// `u_t = 1/n(S_t) sum_k δ'_k prod_{i=t+1}^{k} n(S_i, S_{i-1}) / n(S_i)`,
/// with `pairs` and `counts` as they stand after the episode and
/// `pairs.pair_value` as it stood before it.
pub fn offline_tdc_ledger<T: Scalar>(
    episode: &Episode<T>,
    values: impl Fn(&State) -> T,
    pairs: &impl PairStats<T>,
    counts: impl Fn(&State) -> u64,
) -> Result<UpdateLedger<State, T>, OracleError> {
    check_acyclic(episode)?;
    let n = episode.len();
    let v = state_values(episode, values);
    let next_of = |t: usize| if t + 1 == n { None } else { Some(episode.state(t + 1)) };
    let deltas: Vec<T> = (0..n)
        .map(|t| {
            let s = episode.state(t);
            let np = T::lit(pairs.pair_count(next_of(t), s) as f64);
            let vp = pairs.pair_value(next_of(t), s);
            episode.reward_after(t) + v[t + 1] + (np - T::one()) * (v[t + 1] - vp) - v[t]
        })
        .collect();
    let lambdas = tdc_backward_lambdas(episode, pairs, &counts);
    UpdateLedger::from_pairs((0..n).map(|t| {
        let mut total = T::zero();
        for k in t..n {
            let w = lambdas[t + 1..=k].iter().fold(T::one(), |acc, &l| acc * l);
            total += deltas[k] * w;
        }
        (episode.state(t).clone(), total / T::lit(counts(episode.state(t)) as f64))
    }))
}

/// `λ_t = n(S_t, S_{t-1}) / n(S_t)` for `t >= 1` (`λ_0` is unused and 0).
pub fn tdc_backward_lambdas<T: Scalar>(
    episode: &Episode<T>,
    pairs: &impl PairStats<T>,
    counts: impl Fn(&State) -> u64,
) -> Vec<T> {
    (0..episode.len())
        .map(|t| {
            if t == 0 {
                return T::zero();
            }
            let s = episode.state(t);
            T::lit(pairs.pair_count(Some(s), episode.state(t - 1)) as f64) / T::lit(counts(s) as f64)
        })
        .collect()
}
