//! Count-based transition models.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use super::{FactoredModelOutput, LambdaSource, ModelError};
use crate::env::EnvSpec;
use crate::mdp::{Action, State};
use crate::num::Scalar;

#[derive(Debug, Clone)]
struct Counts<K> {
    total: u64,
    by_outcome: HashMap<K, u64>,
}

impl<K> Default for Counts<K> {
    fn default() -> Self {
        Counts { total: 0, by_outcome: HashMap::new() }
    }
}

impl<K: std::hash::Hash + Eq> Counts<K> {
    fn observe(&mut self, k: K) {
        self.total += 1;
        *self.by_outcome.entry(k).or_insert(0) += 1;
    }

    fn prob<T: Scalar>(&self, k: &K) -> T {
        if self.total == 0 {
            return T::zero();
        }
        let n = self.by_outcome.get(k).copied().unwrap_or(0);
        T::lit(n as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, Default)]
struct Entry {
    joint: Counts<State>,
    components: Vec<Counts<i32>>,
}

/// Empirical `n(x, a, x') / n(x, a)`, plus per-component marginals
/// `n(x, a, x'_i) / n(x, a)`. Unseen `(x, a)` yields probability 0.
#[derive(Debug, Clone, Default)]
pub struct TabularCountModel {
    table: HashMap<(State, Action), Entry>,
}

impl TabularCountModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// `n(x, a)`.
    pub fn visits(&self, x: &State, a: Action) -> u64 {
        self.table.get(&(x.clone(), a)).map_or(0, |e| e.joint.total)
    }

    /// `n(x, a, x')`.
    pub fn transitions(&self, x: &State, a: Action, next: &State) -> u64 {
        self.table
            .get(&(x.clone(), a))
            .and_then(|e| e.joint.by_outcome.get(next).copied())
            .unwrap_or(0)
    }

    /// Every observed `(x, a)` with its successor counts.
    pub fn successors(&self) -> impl Iterator<Item = (&(State, Action), u64, &HashMap<State, u64>)> {
        self.table.iter().map(|(k, e)| (k, e.joint.total, &e.joint.by_outcome))
    }
}

impl<T: Scalar> LambdaSource<T> for TabularCountModel {
    fn observe(&mut self, x: &State, a: Action, next: &State) -> Result<(), ModelError> {
        let e = self.table.entry((x.clone(), a)).or_default();
        e.joint.observe(next.clone());
        if e.components.is_empty() {
            e.components.resize_with(next.len(), Counts::default);
        }
        if e.components.len() != next.len() {
            return Err(ModelError::ComponentMismatch { expected: e.components.len(), got: next.len() });
        }
        for (c, &v) in e.components.iter_mut().zip(next.components()) {
            c.observe(v);
        }
        Ok(())
    }

    fn predict(&self, x: &State, a: Action, next: &State) -> Result<FactoredModelOutput<T>, ModelError> {
        match self.table.get(&(x.clone(), a)) {
            None => Ok(FactoredModelOutput {
                components: SmallVec::from_elem(T::zero(), next.len()),
                joint: T::zero(),
            }),
            Some(e) => Ok(FactoredModelOutput {
                components: e
                    .components
                    .iter()
                    .zip(next.components())
                    .map(|(c, v)| c.prob(v))
                    .collect(),
                joint: e.joint.prob(next),
            }),
        }
    }
}

/// What a component's count table predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// `x'_i - x_i`
    Delta,
    /// `x'_i`
    Value,
}

/// Conditioning set for one component: `x'_i` (or its delta) is counted
/// per value of `(x_given, a)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentCondition {
    pub given: Vec<usize>,
    #[serde(default)]
    pub action: bool,
    #[serde(default = "default_target")]
    pub target: Target,
}

fn default_target() -> Target {
    Target::Value
}

impl ComponentCondition {
    pub fn new(given: &[usize], action: bool, target: Target) -> Self {
        ComponentCondition { given: given.to_vec(), action, target }
    }
}

type CondKey = (SmallVec<[i32; 8]>, usize);

/// Independent per-component count tables with their own conditioning
/// sets; the joint is the product of the component probabilities.
#[derive(Debug, Clone)]
pub struct FactoredCountModel {
    conditions: Vec<ComponentCondition>,
    tables: Vec<HashMap<CondKey, Counts<i32>>>,
}

impl FactoredCountModel {
    pub fn new(conditions: Vec<ComponentCondition>) -> Self {
        let tables = vec![HashMap::new(); conditions.len()];
        FactoredCountModel { conditions, tables }
    }

    pub fn conditions(&self) -> &[ComponentCondition] {
        &self.conditions
    }

    fn key(c: &ComponentCondition, x: &State, a: Action) -> CondKey {
        (c.given.iter().map(|&i| x.component(i)).collect(), if c.action { a.0 } else { usize::MAX })
    }

    fn outcome(c: &ComponentCondition, i: usize, x: &State, next: &State) -> i32 {
        match c.target {
            Target::Delta => next.component(i) - x.component(i),
            Target::Value => next.component(i),
        }
    }

    fn check(&self, x: &State, next: &State) -> Result<(), ModelError> {
        let d = self.conditions.len();
        for s in [x, next] {
            if s.len() != d {
                return Err(ModelError::ComponentMismatch { expected: d, got: s.len() });
            }
        }
        Ok(())
    }
}

impl<T: Scalar> LambdaSource<T> for FactoredCountModel {
    fn observe(&mut self, x: &State, a: Action, next: &State) -> Result<(), ModelError> {
        self.check(x, next)?;
        for (i, (c, t)) in self.conditions.iter().zip(self.tables.iter_mut()).enumerate() {
            t.entry(Self::key(c, x, a)).or_default().observe(Self::outcome(c, i, x, next));
        }
        Ok(())
    }

    fn predict(&self, x: &State, a: Action, next: &State) -> Result<FactoredModelOutput<T>, ModelError> {
        self.check(x, next)?;
        let comps = self
            .conditions
            .iter()
            .zip(&self.tables)
            .enumerate()
            .map(|(i, (c, t))| {
                t.get(&Self::key(c, x, a)).map_or(T::zero(), |n| n.prob(&Self::outcome(c, i, x, next)))
            })
            .collect();
        Ok(FactoredModelOutput::independent(comps))
    }
}

/// Default conditioning sets per environment: each component is predicted
/// from the parts of `(x, a)` that can influence it.
pub fn preset_conditions(env: &EnvSpec) -> Result<Vec<ComponentCondition>, ModelError> {
    use Target::*;
    Ok(match env {
        EnvSpec::AccumulatedCharge(_) => vec![
            // chose_a1: set by the first action only
            ComponentCondition::new(&[2], true, Delta),
            // charge: increments depend on the time step alone
            ComponentCondition::new(&[2], false, Delta),
            // time: always advances by one
            ComponentCondition::new(&[], false, Delta),
        ],
        EnvSpec::KeyToDoor(p) => {
            let nd = p.distractors;
            let time = nd + 3;
            let mut v = vec![
                ComponentCondition::new(&[0, time], true, Value),
                ComponentCondition::new(&[time], false, Value),
            ];
            for _ in 0..nd {
                v.push(ComponentCondition::new(&[0, 1, time], true, Value));
            }
            v.push(ComponentCondition::new(&[0, 1, time], true, Value));
            v.push(ComponentCondition::new(&[time], false, Value));
            v
        }
        EnvSpec::ChainAndSplit(_) | EnvSpec::RandomAcyclic(_) => {
            vec![ComponentCondition::new(&[0, 1], true, Value); 2]
        }
    })
}
