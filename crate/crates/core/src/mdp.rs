//! States, actions, percepts, episodes, policies and the rollout loop.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

use crate::num::Scalar;
use crate::rng::{self, StreamRng};

/// Tolerance for "sums to one" and "components sum to the reward" checks.
pub const PROB_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MdpError {
    #[error("illegal action {action} in state {state}")]
    IllegalAction { state: State, action: Action },
    #[error("no legal actions in state {0}")]
    EmptyActionSet(State),
    #[error("step called on a terminated environment")]
    Terminated,
    #[error("episode exceeded {limit} steps without terminating")]
    RunawayEpisode { limit: usize },
    #[error("epsilon {0} is outside [0, 1]")]
    EpsilonOutOfRange(f64),
    #[error("discount {0} is outside [0, 1]")]
    DiscountOutOfRange(f64),
    #[error("malformed episode: {0}")]
    MalformedEpisode(String),
    #[error("reward components sum to {sum} but the scalar reward is {reward}")]
    RewardMismatch { sum: f64, reward: f64 },
}

/// Discrete action index. Legal actions in a state are always `0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action(pub usize);

impl Action {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0 + 1)
    }
}

/// Discrete state identifier, stored as its component vector.
///
/// Identical underlying environment states always encode to identical
/// component vectors, which makes the encoding usable as a table key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct State(pub SmallVec<[i32; 8]>);

impl State {
    pub fn new(components: &[i32]) -> Self {
        State(SmallVec::from_slice(components))
    }

    #[inline]
    pub fn components(&self) -> &[i32] {
        &self.0
    }

    #[inline]
    pub fn component(&self, i: usize) -> i32 {
        self.0[i]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// The environment's response at one step: reward and state as one token.
#[derive(Debug, Clone, PartialEq)]
pub struct Percept<T> {
    pub reward: T,
    pub state: State,
    /// Per-component rewards, aligned with the state components.
    pub reward_vector: Option<SmallVec<[T; 8]>>,
}

impl<T: Scalar> Percept<T> {
    pub fn new(reward: T, state: State) -> Self {
        Percept { reward, state, reward_vector: None }
    }

    /// Builds a percept whose scalar reward is the sum of `components`.
    pub fn with_components(state: State, components: &[T]) -> Self {
        let reward = components.iter().copied().sum();
        Percept { reward, state, reward_vector: Some(SmallVec::from_slice(components)) }
    }

    pub fn check(&self) -> Result<(), MdpError> {
        if let Some(rv) = &self.reward_vector {
            let sum: T = rv.iter().copied().sum();
            if (sum - self.reward).abs().to_f64_lossy() > PROB_TOLERANCE {
                return Err(MdpError::RewardMismatch {
                    sum: sum.to_f64_lossy(),
                    reward: self.reward.to_f64_lossy(),
                });
            }
        }
        Ok(())
    }
}

/// A complete trajectory `X_0, A_0, X_1, ..., X_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode<T> {
    pub percepts: Vec<Percept<T>>,
    pub actions: Vec<Action>,
    pub terminal: bool,
}

impl<T: Scalar> Episode<T> {
    pub fn new(percepts: Vec<Percept<T>>, actions: Vec<Action>, terminal: bool) -> Result<Self, MdpError> {
        if percepts.len() != actions.len() + 1 {
            return Err(MdpError::MalformedEpisode(format!(
                "{} percepts for {} actions",
                percepts.len(),
                actions.len()
            )));
        }
        if percepts[0].reward != T::zero() {
            return Err(MdpError::MalformedEpisode("initial reward must be 0".into()));
        }
        for p in &percepts {
            p.check()?;
        }
        Ok(Episode { percepts, actions, terminal })
    }

    /// Number of transitions `T`.
    #[inline]
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    #[inline]
    pub fn state(&self, t: usize) -> &State {
        &self.percepts[t].state
    }

    /// `R_{t+1}`, the reward following the action at `t`.
    #[inline]
    pub fn reward_after(&self, t: usize) -> T {
        self.percepts[t + 1].reward
    }

    /// Rewards `R_1, ..., R_T`.
    pub fn rewards(&self) -> impl Iterator<Item = T> + '_ {
        self.percepts.iter().skip(1).map(|p| p.reward)
    }
}

/// Discount factor `gamma` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discount<T>(T);

impl<T: Scalar> Discount<T> {
    pub fn new(gamma: T) -> Result<Self, MdpError> {
        if gamma >= T::zero() && gamma <= T::one() {
            Ok(Discount(gamma))
        } else {
            Err(MdpError::DiscountOutOfRange(gamma.to_f64_lossy()))
        }
    }

    pub fn undiscounted() -> Self {
        Discount(T::one())
    }

    #[inline]
    pub fn gamma(self) -> T {
        self.0
    }
}

/// `sum_t gamma^t R_{t+1}` over the episode.
pub fn discounted_return<T: Scalar>(episode: &Episode<T>, discount: Discount<T>) -> T {
    let gamma = discount.gamma();
    let mut total = T::zero();
    let mut weight = T::one();
    for r in episode.rewards() {
        total += weight * r;
        weight *= gamma;
    }
    total
}

/// A probability distribution over the legal actions `0..n` of one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDist<T>(pub SmallVec<[T; 4]>);

impl<T: Scalar> ActionDist<T> {
    pub fn uniform(n: usize) -> Result<Self, MdpError> {
        if n == 0 {
            return Err(MdpError::EmptyActionSet(State::new(&[])));
        }
        let p = T::one() / T::count(n);
        Ok(ActionDist(smallvec::smallvec![p; n]))
    }

    pub fn point(n: usize, a: Action) -> Self {
        let mut v: SmallVec<[T; 4]> = smallvec::smallvec![T::zero(); n];
        v[a.0] = T::one();
        ActionDist(v)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `pi(a)`; actions outside the legal set have probability 0.
    #[inline]
    pub fn prob(&self, a: Action) -> T {
        self.0.get(a.0).copied().unwrap_or_else(T::zero)
    }

    pub fn probs(&self) -> &[T] {
        &self.0
    }

    /// `sum_a pi(a) v(a)`.
    pub fn expectation(&self, values: &[T]) -> T {
        self.0.iter().zip(values).map(|(&p, &v)| p * v).sum()
    }

    pub fn sample(&self, rng: &mut StreamRng) -> Action {
        if self.0.len() == 1 {
            return Action(0);
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.0.iter().enumerate() {
            acc += p.to_f64_lossy();
            if u < acc {
                return Action(i);
            }
        }
        // Rounding can leave `acc` a hair below 1.
        let last = self.0.iter().rposition(|p| *p > T::zero()).unwrap_or(0);
        Action(last)
    }
}

/// epsilon-greedy distribution over `q` (the legal prefix of a Q row).
///
/// Greedy mass `1 - epsilon` is split evenly across all maximizers, so ties
/// are broken uniformly when the distribution is sampled.
pub fn epsilon_greedy<T: Scalar>(q: &[T], epsilon: T) -> Result<ActionDist<T>, MdpError> {
    if q.is_empty() {
        return Err(MdpError::EmptyActionSet(State::new(&[])));
    }
    if !(epsilon >= T::zero() && epsilon <= T::one()) {
        return Err(MdpError::EpsilonOutOfRange(epsilon.to_f64_lossy()));
    }
    let n = q.len();
    let best = q.iter().copied().fold(T::neg_infinity(), T::max);
    let ties = q.iter().filter(|&&v| v == best).count();
    let explore = epsilon / T::count(n);
    let exploit = (T::one() - epsilon) / T::count(ties);
    Ok(ActionDist(
        q.iter()
            .map(|&v| if v == best { explore + exploit } else { explore })
            .collect(),
    ))
}

/// Maps a state (with `legal` actions) to an action distribution.
pub trait Policy<T: Scalar> {
    fn distribution(&self, state: &State, legal: usize) -> Result<ActionDist<T>, MdpError>;
}

/// Uniform over the legal actions.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPolicy;

impl<T: Scalar> Policy<T> for UniformPolicy {
    fn distribution(&self, state: &State, legal: usize) -> Result<ActionDist<T>, MdpError> {
        ActionDist::uniform(legal).map_err(|_| MdpError::EmptyActionSet(state.clone()))
    }
}

/// Always the given action when legal, otherwise action 0.
#[derive(Debug, Clone, Copy)]
pub struct FixedActionPolicy(pub Action);

impl<T: Scalar> Policy<T> for FixedActionPolicy {
    fn distribution(&self, state: &State, legal: usize) -> Result<ActionDist<T>, MdpError> {
        if legal == 0 {
            return Err(MdpError::EmptyActionSet(state.clone()));
        }
        let a = if self.0 .0 < legal { self.0 } else { Action(0) };
        Ok(ActionDist::point(legal, a))
    }
}

impl<T: Scalar, F> Policy<T> for F
where
    F: Fn(&State, usize) -> Result<ActionDist<T>, MdpError>,
{
    fn distribution(&self, state: &State, legal: usize) -> Result<ActionDist<T>, MdpError> {
        self(state, legal)
    }
}

/// Episodic environment with discrete states and actions.
pub trait Environment<T: Scalar> {
    fn name(&self) -> &'static str;

    /// Starts a new episode; the returned percept carries reward 0.
    fn reset(&mut self, rng: &mut StreamRng) -> Percept<T>;

    /// Applies `action`; returns the next percept and whether it is terminal.
    fn step(&mut self, action: Action, rng: &mut StreamRng) -> Result<(Percept<T>, bool), MdpError>;

    /// Number of legal actions in `state` (they are `0..n`).
    fn legal_actions(&self, state: &State) -> usize;

    /// Largest legal-action count over all states.
    fn max_actions(&self) -> usize;

    /// Fixed episode length bound.
    fn horizon(&self) -> usize;

    /// Step guard used by `rollout`.
    fn max_steps(&self) -> usize {
        10 * self.horizon()
    }
}

/// Runs one episode of `policy` in `env` on the stream derived from `seed`.
pub fn rollout<T, E, P>(env: &mut E, policy: &P, seed: u64) -> Result<Episode<T>, MdpError>
where
    T: Scalar,
    E: Environment<T> + ?Sized,
    P: Policy<T> + ?Sized,
{
    let mut rng = rng::stream(seed, &[rng::tag::EPISODE]);
    rollout_with(env, policy, &mut rng)
}

/// Like [`rollout`] but draws from a caller-owned stream.
pub fn rollout_with<T, E, P>(env: &mut E, policy: &P, rng: &mut StreamRng) -> Result<Episode<T>, MdpError>
where
    T: Scalar,
    E: Environment<T> + ?Sized,
    P: Policy<T> + ?Sized,
{
    let limit = env.max_steps();
    let first = env.reset(rng);
    let mut percepts = vec![first];
    let mut actions = Vec::new();
    loop {
        if actions.len() >= limit {
            return Err(MdpError::RunawayEpisode { limit });
        }
        let state = &percepts.last().expect("nonempty").state;
        let dist = policy.distribution(state, env.legal_actions(state))?;
        let a = dist.sample(rng);
        let (next, done) = env.step(a, rng)?;
        actions.push(a);
        percepts.push(next);
        if done {
            break;
        }
    }
    Episode::new(percepts, actions, true)
}
