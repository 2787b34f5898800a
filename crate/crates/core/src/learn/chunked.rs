//! Chunked TD / SARSA / Expected-SARSA and the constant-λ baselines.
//!
//! One step: decay every trace by `gamma * lambda`, bump the trace of the
//! current state(-action), then apply `alpha * delta` along the traces.

use smallvec::SmallVec;

use super::tables::{FactoredQTables, TabularQTable, TabularValueTable};
use super::{check_alpha, check_lambda, LearnError};
use crate::mdp::{Action, ActionDist, Discount, State};
use crate::model::LambdaSource;
use crate::num::Scalar;

/// State-value learner with accumulating traces.
#[derive(Debug, Clone)]
pub struct ValueLearner<T> {
    pub table: TabularValueTable<T>,
    pub alpha: T,
    pub gamma: T,
}

impl<T: Scalar> ValueLearner<T> {
    pub fn new(alpha: T, discount: Discount<T>) -> Result<Self, LearnError> {
        Ok(ValueLearner { table: TabularValueTable::new(), alpha: check_alpha(alpha)?, gamma: discount.gamma() })
    }

    pub fn begin_episode(&mut self) {
        self.table.traces.clear();
    }

    /// One backward-view update; returns the TD error.
    pub fn step(&mut self, x: &State, reward: T, next: &State, done: bool, lambda: T) -> Result<T, LearnError> {
        let lambda = check_lambda(lambda)?;
        let t = &mut self.table;
        t.traces.decay(self.gamma * lambda);
        let i = t.slot(x);
        t.traces.accumulate(i);
        let v_next = if done { T::zero() } else { t.value(next) };
        let delta = reward + self.gamma * v_next - t.values[i];
        t.traces.apply(&mut t.values, self.alpha * delta);
        if done {
            t.traces.clear();
        }
        Ok(delta)
    }
}

/// Which next-state value the TD error bootstraps from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bootstrap {
    /// `Q̂(S', A')`.
    Sarsa,
    /// `sum_a pi(a | S') Q̂(S', a)`.
    Expected,
}

/// One control transition as seen by the Q-learners.
#[derive(Debug, Clone, Copy)]
pub struct QStep<'a, T> {
    pub state: &'a State,
    pub action: Action,
    pub reward: T,
    pub reward_vector: Option<&'a [T]>,
    pub next: &'a State,
    pub done: bool,
    /// `A_{t+1}`, required for SARSA bootstraps on non-terminal steps.
    pub next_action: Option<Action>,
    /// `pi(. | S_{t+1})`, required for expected bootstraps.
    pub next_dist: Option<&'a ActionDist<T>>,
}

impl<T: Scalar> QStep<'_, T> {
    fn next_dist(&self) -> Result<&ActionDist<T>, LearnError> {
        self.next_dist.ok_or_else(|| LearnError::PolicyUndefined(self.next.clone()))
    }

    fn next_action(&self) -> Result<Action, LearnError> {
        self.next_action.ok_or_else(|| LearnError::PolicyUndefined(self.next.clone()))
    }
}

/// Tabular SARSA-family learner with accumulating state-action traces.
#[derive(Debug, Clone)]
pub struct TabularQLearner<T> {
    pub table: TabularQTable<T>,
    pub bootstrap: Bootstrap,
    pub alpha: T,
    pub gamma: T,
}

impl<T: Scalar> TabularQLearner<T> {
    pub fn new(actions: usize, bootstrap: Bootstrap, alpha: T, discount: Discount<T>) -> Result<Self, LearnError> {
        Ok(TabularQLearner {
            table: TabularQTable::new(actions),
            bootstrap,
            alpha: check_alpha(alpha)?,
            gamma: discount.gamma(),
        })
    }

    pub fn begin_episode(&mut self) {
        self.table.traces.clear();
    }

    pub fn q_row(&self, s: &State) -> &[T] {
        self.table.row(s)
    }

    fn bootstrap_value(&self, step: &QStep<'_, T>) -> Result<T, LearnError> {
        if step.done {
            return Ok(T::zero());
        }
        let row = self.table.row(step.next);
        Ok(match self.bootstrap {
            Bootstrap::Sarsa => row[step.next_action()?.0],
            Bootstrap::Expected => {
                let d = step.next_dist()?;
                d.expectation(&row[..d.len()])
            }
        })
    }

    /// One backward-view update with trace decay `gamma * lambda`;
    /// returns the TD error.
    pub fn step(&mut self, step: &QStep<'_, T>, lambda: T) -> Result<T, LearnError> {
        let lambda = check_lambda(lambda)?;
        let boot = self.bootstrap_value(step)?;
        let t = &mut self.table;
        t.traces.decay(self.gamma * lambda);
        let i = t.slot(step.state, step.action);
        t.traces.accumulate(i);
        let delta = step.reward + self.gamma * boot - t.values[i];
        t.traces.apply(&mut t.values, self.alpha * delta);
        if step.done {
            t.traces.clear();
        }
        Ok(delta)
    }
}

/// Per-reward-component Q-tables, each with its own traces and decay.
#[derive(Debug, Clone)]
pub struct FactoredQLearner<T> {
    pub tables: FactoredQTables<T>,
    pub bootstrap: Bootstrap,
    pub alpha: T,
    pub gamma: T,
}

impl<T: Scalar> FactoredQLearner<T> {
    pub fn new(
        components: usize,
        actions: usize,
        bootstrap: Bootstrap,
        alpha: T,
        discount: Discount<T>,
    ) -> Result<Self, LearnError> {
        Ok(FactoredQLearner {
            tables: FactoredQTables::new(components, actions),
            bootstrap,
            alpha: check_alpha(alpha)?,
            gamma: discount.gamma(),
        })
    }

    pub fn begin_episode(&mut self) {
        self.tables.traces.iter_mut().for_each(|t| t.clear());
    }

    pub fn q_row(&self, s: &State) -> SmallVec<[T; 4]> {
        self.tables.global_row(s)
    }

    /// `lambdas` holds one decay per component, or a single shared one.
    pub fn step(&mut self, step: &QStep<'_, T>, lambdas: &[T]) -> Result<(), LearnError> {
        let d = self.tables.components();
        let rv = step.reward_vector.ok_or(LearnError::MissingRewardVector)?;
        if rv.len() != d {
            return Err(LearnError::ComponentMismatch { expected: d, got: rv.len() });
        }
        if lambdas.len() != d && lambdas.len() != 1 {
            return Err(LearnError::ComponentMismatch { expected: d, got: lambdas.len() });
        }
        for &l in lambdas {
            check_lambda(l)?;
        }
        let next_k = if step.done { None } else { self.tables.index.get(step.next) };
        let (next_a, next_dist) = match (step.done, self.bootstrap) {
            (true, _) => (None, None),
            (false, Bootstrap::Sarsa) => (Some(step.next_action()?), None),
            (false, Bootstrap::Expected) => (None, Some(step.next_dist()?)),
        };
        let slot = self.tables.slot(step.state, step.action);
        let na = self.tables.actions;
        for i in 0..d {
            let lambda = if lambdas.len() == 1 { lambdas[0] } else { lambdas[i] };
            let values = &mut self.tables.values[i];
            let boot = match next_k {
                None => T::zero(),
                Some(k) => {
                    let row = &values[k * na..(k + 1) * na];
                    match (next_a, next_dist) {
                        (Some(a), _) => row[a.0],
                        (None, Some(dist)) => dist.expectation(&row[..dist.len()]),
                        (None, None) => T::zero(),
                    }
                }
            };
            let traces = &mut self.tables.traces[i];
            traces.decay(self.gamma * lambda);
            traces.accumulate(slot);
            let delta = rv[i] + self.gamma * boot - values[slot];
            traces.apply(values, self.alpha * delta);
            if step.done {
                traces.clear();
            }
        }
        Ok(())
    }
}

/// Chunked-TD for state values: decay by `P̂^π(X_{t+1} | X_t)`.
///
/// The model must already have observed this transition.
#[allow(clippy::too_many_arguments)]
pub fn chunked_td_v_step<T: Scalar, M: LambdaSource<T> + ?Sized>(
    learner: &mut ValueLearner<T>,
    x: &State,
    reward: T,
    next: &State,
    done: bool,
    model: &M,
    pi: &ActionDist<T>,
) -> Result<T, LearnError> {
    let lambda = model.policy_marginal_prob(x, next, pi)?;
    learner.step(x, reward, next, done, lambda)
}

/// Chunked SARSA: decay by `P̂(X_{t+1} | X_t, A_t) pi(A_{t+1} | X_{t+1})`,
/// with the policy factor taken as 1 on the terminal step.
pub fn chunked_sarsa_step<T: Scalar, M: LambdaSource<T> + ?Sized>(
    learner: &mut TabularQLearner<T>,
    step: &QStep<'_, T>,
    model: &M,
) -> Result<T, LearnError> {
    let pi_next = if step.done { T::one() } else { step.next_dist()?.prob(step.next_action()?) };
    let lambda = model.sarsa_joint_prob(step.state, step.action, step.next, pi_next)?;
    learner.step(step, lambda)
}

/// Chunked Expected-SARSA: decay by `P̂^π(X_{t+1} | X_t)` where `pi` is
/// the distribution `A_t` was drawn from.
pub fn chunked_expected_sarsa_step<T: Scalar, M: LambdaSource<T> + ?Sized>(
    learner: &mut TabularQLearner<T>,
    step: &QStep<'_, T>,
    model: &M,
    pi: &ActionDist<T>,
) -> Result<T, LearnError> {
    let lambda = model.policy_marginal_prob(step.state, step.next, pi)?;
    learner.step(step, lambda)
}

/// Decomposed-reward Chunked Expected-SARSA: component `i` decays by
/// `P̂^π(X^i_{t+1} | X_t)`.
pub fn chunked_factored_step<T: Scalar, M: LambdaSource<T> + ?Sized>(
    learner: &mut FactoredQLearner<T>,
    step: &QStep<'_, T>,
    model: &M,
    pi: &ActionDist<T>,
) -> Result<(), LearnError> {
    let lambdas = model.component_marginal_probs(step.state, step.next, pi)?;
    learner.step(step, &lambdas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConstantModel, FnModel};

    fn s(i: i32) -> State {
        State::new(&[i])
    }

    #[test]
    fn prior_trace_is_decayed_by_model_probability() {
        let mut l = ValueLearner::new(1.0, Discount::undiscounted()).unwrap();
        let m = ConstantModel(0.3);
        let pi = ActionDist::uniform(1).unwrap();
        chunked_td_v_step(&mut l, &s(0), 0.0, &s(1), false, &m, &pi).unwrap();
        assert_eq!(l.table.traces.get(0), 1.0);
        chunked_td_v_step(&mut l, &s(1), 0.0, &s(2), false, &m, &pi).unwrap();
        assert_eq!(l.table.traces.get(0), 0.3);
    }

    #[test]
    fn lambda_outside_unit_interval_is_rejected() {
        let mut l = ValueLearner::new(0.1, Discount::undiscounted()).unwrap();
        assert!(matches!(l.step(&s(0), 0.0, &s(1), false, 1.5), Err(LearnError::LambdaOutOfRange(_))));
        let m = FnModel(|_: &State, _: Action, _: &State| -0.1);
        let pi = ActionDist::uniform(1).unwrap();
        assert!(chunked_td_v_step(&mut l, &s(0), 0.0, &s(1), false, &m, &pi).is_err());
    }

    #[test]
    fn expected_bootstrap_averages_under_policy() {
        let mut l = TabularQLearner::new(2, Bootstrap::Expected, 1.0, Discount::undiscounted()).unwrap();
        l.table.set(&s(1), Action(0), 2.0);
        let uni = ActionDist::uniform(2).unwrap();
        let step = QStep {
            state: &s(0),
            action: Action(0),
            reward: 0.0,
            reward_vector: None,
            next: &s(1),
            done: false,
            next_action: None,
            next_dist: Some(&uni),
        };
        assert_eq!(l.step(&step, 0.0).unwrap(), 1.0);
        let greedy = ActionDist::point(2, Action(0));
        let step = QStep { state: &s(5), next_dist: Some(&greedy), ..step };
        assert_eq!(l.step(&step, 0.0).unwrap(), 2.0);
        let step = QStep { next_dist: None, ..step };
        assert!(matches!(l.step(&step, 0.0), Err(LearnError::PolicyUndefined(_))));
    }

    #[test]
    fn terminal_bootstrap_is_zero_and_clears_traces() {
        let mut l = TabularQLearner::new(1, Bootstrap::Sarsa, 0.5, Discount::undiscounted()).unwrap();
        l.table.set(&s(1), Action(0), 10.0);
        let step = QStep {
            state: &s(0),
            action: Action(0),
            reward: 1.0,
            reward_vector: None,
            next: &s(1),
            done: true,
            next_action: None,
            next_dist: None,
        };
        let m = ConstantModel(1.0);
        assert_eq!(chunked_sarsa_step(&mut l, &step, &m).unwrap(), 1.0);
        assert_eq!(l.table.value(&s(0), Action(0)), 0.5);
        assert_eq!(l.table.traces.iter().count(), 0);
    }

    #[test]
    fn sarsa_joint_one_leaves_traces_undecayed() {
        let mut l = TabularQLearner::new(2, Bootstrap::Sarsa, 0.1, Discount::undiscounted()).unwrap();
        let m = ConstantModel(1.0);
        let pt = ActionDist::point(2, Action(1));
        for i in 0..3 {
            let step = QStep {
                state: &s(i),
                action: Action(1),
                reward: 0.0,
                reward_vector: None,
                next: &s(i + 1),
                done: false,
                next_action: Some(Action(1)),
                next_dist: Some(&pt),
            };
            chunked_sarsa_step(&mut l, &step, &m).unwrap();
        }
        assert!(l.table.traces.iter().all(|(_, e)| e == 1.0));
    }

    #[test]
    fn factored_requires_reward_vector() {
        let mut l = FactoredQLearner::new(2, 1, Bootstrap::Expected, 0.1, Discount::undiscounted()).unwrap();
        let step = QStep {
            state: &s(0),
            action: Action(0),
            reward: 1.0,
            reward_vector: None,
            next: &s(1),
            done: true,
            next_action: None,
            next_dist: None,
        };
        assert_eq!(l.step(&step, &[1.0]), Err(LearnError::MissingRewardVector));
    }
}
