//! Count-based step sizes: TD(1/n) and TDC, both undiscounted.

use std::collections::HashMap;

use super::tables::{StateIndex, Traces};
use super::LearnError;
use crate::mdp::State;
use crate::num::Scalar;

const TERMINAL: usize = usize::MAX;

/// Counts, values, pairwise values and the current trace.
#[derive(Debug, Clone, Default)]
pub struct SuttonSinghState<T> {
    pub index: StateIndex,
    pub values: Vec<T>,
    /// `n(s)`.
    pub visits: Vec<u64>,
    /// `(s', s) -> (n(s', s), V̂(s', s))`; `s'` is `usize::MAX` for a
    /// terminal successor.
    pub pairs: HashMap<(usize, usize), (u64, T)>,
    pub traces: Traces<T>,
    episode: Vec<(usize, usize)>,
    seen: Vec<bool>,
}

impl<T: Scalar> SuttonSinghState<T> {
    pub fn new() -> Self {
        SuttonSinghState {
            index: StateIndex::default(),
            values: Vec::new(),
            visits: Vec::new(),
            pairs: HashMap::new(),
            traces: Traces::default(),
            episode: Vec::new(),
            seen: Vec::new(),
        }
    }

    pub fn value(&self, s: &State) -> T {
        self.index.get(s).map_or(T::zero(), |i| self.values[i])
    }

    pub fn visits_of(&self, s: &State) -> u64 {
        self.index.get(s).map_or(0, |i| self.visits[i])
    }

    /// `n(s', s)` with `None` standing for a terminal `s'`.
    pub fn pair_count(&self, next: Option<&State>, s: &State) -> u64 {
        self.pair_key(next, s).and_then(|k| self.pairs.get(&k)).map_or(0, |p| p.0)
    }

    /// `V̂(s', s)`.
    pub fn pair_value(&self, next: Option<&State>, s: &State) -> T {
        self.pair_key(next, s).and_then(|k| self.pairs.get(&k)).map_or(T::zero(), |p| p.1)
    }

    fn pair_key(&self, next: Option<&State>, s: &State) -> Option<(usize, usize)> {
        let j = match next {
            Some(n) => self.index.get(n)?,
            None => TERMINAL,
        };
        Some((j, self.index.get(s)?))
    }

    fn slot(&mut self, s: &State) -> usize {
        let i = self.index.intern(s);
        if i >= self.values.len() {
            self.values.resize(i + 1, T::zero());
            self.visits.resize(i + 1, 0);
            self.seen.resize(i + 1, false);
        }
        i
    }

    pub fn begin_episode(&mut self) {
        self.traces.clear();
        for &(_, i) in &self.episode {
            self.seen[i] = false;
        }
        self.episode.clear();
    }

    /// Interns both states, checks acyclicity and records the transition.
    fn enter(&mut self, x: &State, next: &State, done: bool) -> Result<(usize, usize), LearnError> {
        let i = self.slot(x);
        if self.seen[i] {
            return Err(LearnError::Cyclic(x.clone()));
        }
        self.seen[i] = true;
        let j = if done { TERMINAL } else { self.slot(next) };
        if j != TERMINAL && self.seen[j] {
            return Err(LearnError::Cyclic(next.clone()));
        }
        self.episode.push((j, i));
        Ok((i, j))
    }

    fn v(&self, j: usize) -> T {
        if j == TERMINAL {
            T::zero()
        } else {
            self.values[j]
        }
    }
}

/// TD(1/n): step size and trace decay `1/n(S_t)`.
#[derive(Debug, Clone, Default)]
pub struct TdOneOverN<T> {
    pub state: SuttonSinghState<T>,
}

impl<T: Scalar> TdOneOverN<T> {
    pub fn new() -> Self {
        TdOneOverN { state: SuttonSinghState::new() }
    }

    pub fn begin_episode(&mut self) {
        self.state.begin_episode();
    }

    pub fn value(&self, s: &State) -> T {
        self.state.value(s)
    }

    pub fn step(&mut self, x: &State, reward: T, next: &State, done: bool) -> Result<T, LearnError> {
        let st = &mut self.state;
        let (i, j) = st.enter(x, next, done)?;
        st.visits[i] += 1;
        st.traces.set(i, T::one());
        let delta = reward + st.v(j) - st.values[i];
        let inv = T::one() / T::lit(st.visits[i] as f64);
        st.traces.apply(&mut st.values, inv * delta);
        st.traces.decay(inv);
        if done {
            st.traces.clear();
        }
        Ok(delta)
    }
}

/// TDC: corrected TD error with pairwise values, step `1/n(S_t)` and trace
/// decay `n(S_{t+1}, S_t) / n(S_t)`.
#[derive(Debug, Clone, Default)]
pub struct Tdc<T> {
    pub state: SuttonSinghState<T>,
}

impl<T: Scalar> Tdc<T> {
    pub fn new() -> Self {
        Tdc { state: SuttonSinghState::new() }
    }

    pub fn begin_episode(&mut self) {
        self.state.begin_episode();
    }

    pub fn value(&self, s: &State) -> T {
        self.state.value(s)
    }

    pub fn step(&mut self, x: &State, reward: T, next: &State, done: bool) -> Result<T, LearnError> {
        let st = &mut self.state;
        let (i, j) = st.enter(x, next, done)?;
        let pair = st.pairs.entry((j, i)).or_insert((0, T::zero()));
        pair.0 += 1;
        let (n_pair, v_pair) = (T::lit(pair.0 as f64), pair.1);
        st.visits[i] += 1;
        let n = T::lit(st.visits[i] as f64);
        st.traces.set(i, T::one());
        let v_next = st.v(j);
        let delta = reward + v_next + (n_pair - T::one()) * (v_next - v_pair) - st.values[i];
        st.traces.apply(&mut st.values, delta / n);
        st.traces.decay(n_pair / n);
        if done {
            self.end_episode();
        }
        Ok(delta)
    }

    /// `V̂(S_{t+1}, S_t) <- V̂(S_{t+1})` for every non-terminal successor of
    /// the episode; called automatically on the terminal step.
    pub fn end_episode(&mut self) {
        let st = &mut self.state;
        for &(j, i) in &st.episode {
            if j != TERMINAL {
                let v = st.values[j];
                if let Some(p) = st.pairs.get_mut(&(j, i)) {
                    p.1 = v;
                }
            }
        }
        st.traces.clear();
    }
}

impl<T: Scalar> crate::oracle::PairStats<T> for SuttonSinghState<T> {
    fn pair_count(&self, next: Option<&State>, s: &State) -> u64 {
        SuttonSinghState::pair_count(self, next, s)
    }

    fn pair_value(&self, next: Option<&State>, s: &State) -> T {
        SuttonSinghState::pair_value(self, next, s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(i: i32) -> State {
        State::new(&[i])
    }

    #[test]
    fn first_visit_takes_the_reward() {
        let mut l = TdOneOverN::<f64>::new();
        l.begin_episode();
        l.step(&s(0), 3.5, &s(1), true).unwrap();
        assert_eq!(l.value(&s(0)), 3.5);
    }

    #[test]
    fn averages_targets_across_episodes() {
        let mut l = TdOneOverN::<f64>::new();
        for g in [2.0, 4.0] {
            l.begin_episode();
            l.step(&s(0), 0.0, &s(1), false).unwrap();
            l.step(&s(1), g, &s(2), true).unwrap();
        }
        // s1 averages g1, g2; s0 averages its targets R + Ṽ(s1) = 2, 3.
        assert_eq!(l.value(&s(1)), 3.0);
        assert_eq!(l.value(&s(0)), 2.5);
    }

    #[test]
    fn revisits_are_rejected() {
        let mut l = TdOneOverN::<f64>::new();
        l.begin_episode();
        l.step(&s(0), 0.0, &s(1), false).unwrap();
        assert!(matches!(l.step(&s(1), 0.0, &s(0), false), Err(LearnError::Cyclic(_))));
        let mut l = Tdc::<f64>::new();
        l.begin_episode();
        assert!(matches!(l.step(&s(0), 0.0, &s(0), false), Err(LearnError::Cyclic(_))));
    }

    #[test]
    fn tdc_on_a_deterministic_chain_recovers_returns() {
        let mut l = Tdc::<f64>::new();
        for _ in 0..5 {
            l.begin_episode();
            for i in 0..4 {
                l.step(&s(i), 1.0, &s(i + 1), i == 3).unwrap();
            }
        }
        for i in 0..4 {
            assert!((l.value(&s(i)) - (4 - i) as f64).abs() < 1e-12);
        }
        assert_eq!(l.state.pair_count(Some(&s(2)), &s(1)), 5);
        assert_eq!(l.state.pair_value(Some(&s(2)), &s(1)), 2.0);
    }
}
