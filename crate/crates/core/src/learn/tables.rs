//! Value tables and sparse eligibility traces.

use std::collections::HashMap;

use crate::mdp::{Action, State};
use crate::num::Scalar;

/// Interns states into dense indices.
#[derive(Debug, Clone, Default)]
pub struct StateIndex {
    ids: HashMap<State, usize>,
    states: Vec<State>,
}

impl StateIndex {
    pub fn get(&self, s: &State) -> Option<usize> {
        self.ids.get(s).copied()
    }

    pub fn intern(&mut self, s: &State) -> usize {
        if let Some(&i) = self.ids.get(s) {
            return i;
        }
        let i = self.states.len();
        self.ids.insert(s.clone(), i);
        self.states.push(s.clone());
        i
    }

    pub fn state(&self, i: usize) -> &State {
        &self.states[i]
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }
}

/// Accumulating traces over dense slots; only slots touched since the last
/// clear are visited.
#[derive(Debug, Clone, Default)]
pub struct Traces<T> {
    e: Vec<T>,
    listed: Vec<bool>,
    active: Vec<usize>,
}

impl<T: Scalar> Traces<T> {
    fn reserve(&mut self, slot: usize) {
        if slot >= self.e.len() {
            self.e.resize(slot + 1, T::zero());
            self.listed.resize(slot + 1, false);
        }
    }

    fn touch(&mut self, slot: usize) {
        self.reserve(slot);
        if !self.listed[slot] {
            self.listed[slot] = true;
            self.active.push(slot);
        }
    }

    pub fn get(&self, slot: usize) -> T {
        self.e.get(slot).copied().unwrap_or_else(T::zero)
    }

    /// `e(slot) += 1`.
    pub fn accumulate(&mut self, slot: usize) {
        self.touch(slot);
        self.e[slot] += T::one();
    }

    /// `e(slot) = v`.
    pub fn set(&mut self, slot: usize, v: T) {
        self.touch(slot);
        self.e[slot] = v;
    }

    /// `e <- factor * e`; a zero factor empties the trace.
    pub fn decay(&mut self, factor: T) {
        if factor == T::zero() {
            self.clear();
            return;
        }
        if factor == T::one() {
            return;
        }
        for &i in &self.active {
            self.e[i] *= factor;
        }
    }

    /// `values[i] += step * e(i)` for every traced slot.
    pub fn apply(&self, values: &mut [T], step: T) {
        for &i in &self.active {
            values[i] += step * self.e[i];
        }
    }

    pub fn clear(&mut self) {
        for &i in &self.active {
            self.e[i] = T::zero();
            self.listed[i] = false;
        }
        self.active.clear();
    }

    /// Traced slots with their eligibilities, in first-touch order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.active.iter().map(|&i| (i, self.e[i]))
    }
}

/// `V̂(s)` with per-state traces; unknown states read as 0.
#[derive(Debug, Clone, Default)]
pub struct TabularValueTable<T> {
    pub index: StateIndex,
    pub values: Vec<T>,
    pub traces: Traces<T>,
}

impl<T: Scalar> TabularValueTable<T> {
    pub fn new() -> Self {
        TabularValueTable { index: StateIndex::default(), values: Vec::new(), traces: Traces::default() }
    }

    pub fn value(&self, s: &State) -> T {
        self.index.get(s).map_or(T::zero(), |i| self.values[i])
    }

    pub fn slot(&mut self, s: &State) -> usize {
        let i = self.index.intern(s);
        if i >= self.values.len() {
            self.values.resize(i + 1, T::zero());
        }
        i
    }

    pub fn set(&mut self, s: &State, v: T) {
        let i = self.slot(s);
        self.values[i] = v;
    }

    pub fn snapshot(&self) -> HashMap<State, T> {
        self.index.states().iter().cloned().zip(self.values.iter().copied()).collect()
    }
}

/// `Q̂(s, a)` stored as rows of `actions` entries.
#[derive(Debug, Clone)]
pub struct TabularQTable<T> {
    pub index: StateIndex,
    pub actions: usize,
    pub values: Vec<T>,
    pub traces: Traces<T>,
    zeros: Vec<T>,
}

impl<T: Scalar> TabularQTable<T> {
    pub fn new(actions: usize) -> Self {
        TabularQTable {
            index: StateIndex::default(),
            actions,
            values: Vec::new(),
            traces: Traces::default(),
            zeros: vec![T::zero(); actions],
        }
    }

    /// All action values at `s` (zeros when unseen).
    pub fn row(&self, s: &State) -> &[T] {
        match self.index.get(s) {
            Some(i) => &self.values[i * self.actions..(i + 1) * self.actions],
            None => &self.zeros,
        }
    }

    pub fn value(&self, s: &State, a: Action) -> T {
        self.row(s)[a.0]
    }

    pub fn slot(&mut self, s: &State, a: Action) -> usize {
        assert!(a.0 < self.actions, "action {} out of range", a.0);
        let i = self.index.intern(s);
        if (i + 1) * self.actions > self.values.len() {
            self.values.resize((i + 1) * self.actions, T::zero());
        }
        i * self.actions + a.0
    }

    pub fn set(&mut self, s: &State, a: Action, v: T) {
        let i = self.slot(s, a);
        self.values[i] = v;
    }

    pub fn snapshot(&self) -> HashMap<(State, Action), T> {
        let mut out = HashMap::new();
        for (i, s) in self.index.states().iter().enumerate() {
            for a in 0..self.actions {
                out.insert((s.clone(), Action(a)), self.values[i * self.actions + a]);
            }
        }
        out
    }
}

/// One Q-table per reward component; the global value is their sum.
#[derive(Debug, Clone)]
pub struct FactoredQTables<T> {
    pub index: StateIndex,
    pub actions: usize,
    /// `values[i]` is component `i`'s flat table.
    pub values: Vec<Vec<T>>,
    pub traces: Vec<Traces<T>>,
}

impl<T: Scalar> FactoredQTables<T> {
    pub fn new(components: usize, actions: usize) -> Self {
        FactoredQTables {
            index: StateIndex::default(),
            actions,
            values: vec![Vec::new(); components],
            traces: vec![Traces::default(); components],
        }
    }

    pub fn components(&self) -> usize {
        self.values.len()
    }

    pub fn component_value(&self, i: usize, s: &State, a: Action) -> T {
        self.index.get(s).map_or(T::zero(), |k| self.values[i][k * self.actions + a.0])
    }

    /// `sum_i Q̂^i(s, a)`, recomputed on every call.
    pub fn global_value(&self, s: &State, a: Action) -> T {
        match self.index.get(s) {
            Some(k) => self.values.iter().map(|v| v[k * self.actions + a.0]).sum(),
            None => T::zero(),
        }
    }

    pub fn global_row(&self, s: &State) -> smallvec::SmallVec<[T; 4]> {
        (0..self.actions).map(|a| self.global_value(s, Action(a))).collect()
    }

    pub fn slot(&mut self, s: &State, a: Action) -> usize {
        assert!(a.0 < self.actions, "action {} out of range", a.0);
        let k = self.index.intern(s);
        let need = (k + 1) * self.actions;
        for v in &mut self.values {
            if v.len() < need {
                v.resize(need, T::zero());
            }
        }
        k * self.actions + a.0
    }
}
