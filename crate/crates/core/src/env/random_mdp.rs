//! Random acyclic layered MDPs with known dynamics.
//!
//! States are `(layer, index)`. The episode starts in `(0, 0)`; every state
//! in layer `l < L-1` transitions only into layer `l+1`, and states in the
//! last layer are terminal. Rewards depend on `(s, a, s')`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::{Action, Environment, MdpError, Percept, State};
use crate::num::Scalar;
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomMdpParams {
    pub seed: u64,
    pub layers: usize,
    pub width: usize,
    pub actions: usize,
    pub reward_scale: f64,
}

impl Default for RandomMdpParams {
    fn default() -> Self {
        RandomMdpParams { seed: 0, layers: 6, width: 4, actions: 2, reward_scale: 1.0 }
    }
}

/// One transition row: `(next index, probability, reward)` triples.
type Row = Vec<(usize, f64, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct RandomAcyclicMdp {
    params: RandomMdpParams,
    /// `rows[layer][index][action]`, defined for `layer < layers - 1`.
    rows: Vec<Vec<Vec<Row>>>,
    current: State,
    done: bool,
}

/// Builds a layered MDP from `seed`.
pub fn generate_acyclic_mdp(
    seed: u64,
    layers: usize,
    width: usize,
    actions: usize,
    reward_scale: f64,
) -> Result<RandomAcyclicMdp, String> {
    RandomAcyclicMdp::new(RandomMdpParams { seed, layers, width, actions, reward_scale })
}

impl RandomAcyclicMdp {
    pub fn new(params: RandomMdpParams) -> Result<Self, String> {
        if params.layers < 2 || params.width == 0 || params.actions == 0 {
            return Err("random_acyclic needs layers >= 2, width >= 1, actions >= 1".into());
        }
        let mut r = rng::stream(params.seed, &[rng::tag::MDP]);
        let w = params.width;
        let rows = (0..params.layers - 1)
            .map(|_| {
                (0..w)
                    .map(|_| (0..params.actions).map(|_| random_row(&mut r, w, params.reward_scale)).collect())
                    .collect()
            })
            .collect();
        Ok(RandomAcyclicMdp { params, rows, current: Self::start_state(), done: true })
    }

    pub fn params(&self) -> &RandomMdpParams {
        &self.params
    }

    pub fn start_state() -> State {
        State::new(&[0, 0])
    }

    pub fn is_terminal(&self, s: &State) -> bool {
        s.component(0) as usize >= self.params.layers - 1
    }

    fn row(&self, s: &State, a: Action) -> Option<&Row> {
        let (l, i) = (s.component(0) as usize, s.component(1) as usize);
        self.rows.get(l)?.get(i)?.get(a.0)
    }

    /// True `P(s' | s, a)`; 0 for anything outside the support.
    pub fn true_prob(&self, s: &State, a: Action, next: &State) -> f64 {
        if next.component(0) != s.component(0) + 1 {
            return 0.0;
        }
        self.row(s, a)
            .and_then(|row| row.iter().find(|(j, _, _)| *j as i32 == next.component(1)))
            .map_or(0.0, |&(_, p, _)| p)
    }

    /// `(s', probability)` pairs reachable from `(s, a)`.
    pub fn successors(&self, s: &State, a: Action) -> Vec<(State, f64)> {
        let l = s.component(0);
        self.row(s, a)
            .map(|row| row.iter().map(|&(j, p, _)| (State::new(&[l + 1, j as i32]), p)).collect())
            .unwrap_or_default()
    }

    /// Exact state values under a policy given by `pi(state) -> probabilities`.
    pub fn policy_values(&self, pi: impl Fn(&State) -> Vec<f64>) -> std::collections::HashMap<State, f64> {
        let mut v = std::collections::HashMap::new();
        let last = self.params.layers - 1;
        for j in 0..self.params.width {
            v.insert(State::new(&[last as i32, j as i32]), 0.0);
        }
        for l in (0..last).rev() {
            for i in 0..self.params.width {
                let s = State::new(&[l as i32, i as i32]);
                let probs = pi(&s);
                let mut total = 0.0;
                for (a, &pa) in probs.iter().enumerate() {
                    for &(j, p, r) in &self.rows[l][i][a] {
                        total += pa * p * (r + v[&State::new(&[l as i32 + 1, j as i32])]);
                    }
                }
                v.insert(s, total);
            }
        }
        v
    }
}

fn random_row(r: &mut StreamRng, width: usize, scale: f64) -> Row {
    let support = r.random_range(1..=width);
    let targets = rand::seq::index::sample(r, width, support).into_vec();
    let weights: Vec<f64> = (0..support).map(|_| r.random_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut row: Row = targets
        .into_iter()
        .zip(weights)
        .map(|(j, w)| (j, w / total, r.random_range(-scale..=scale)))
        .collect();
    row.sort_by_key(|e| e.0);
    row
}

impl<T: Scalar> Environment<T> for RandomAcyclicMdp {
    fn name(&self) -> &'static str {
        "random_acyclic"
    }

    fn reset(&mut self, _rng: &mut StreamRng) -> Percept<T> {
        self.current = Self::start_state();
        self.done = false;
        Percept::new(T::zero(), self.current.clone())
    }

    fn step(&mut self, action: Action, rng: &mut StreamRng) -> Result<(Percept<T>, bool), MdpError> {
        if self.done {
            return Err(MdpError::Terminated);
        }
        if action.0 >= self.params.actions {
            return Err(MdpError::IllegalAction { state: self.current.clone(), action });
        }
        let row = self.row(&self.current, action).ok_or(MdpError::Terminated)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = row[row.len() - 1];
        for &e in row {
            acc += e.1;
            if u < acc {
                pick = e;
                break;
            }
        }
        let next = State::new(&[self.current.component(0) + 1, pick.0 as i32]);
        let done = self.is_terminal(&next);
        self.current = next;
        self.done = done;
        Ok((Percept::new(T::lit(pick.2), self.current.clone()), done))
    }

    fn legal_actions(&self, state: &State) -> usize {
        if self.is_terminal(state) {
            0
        } else {
            self.params.actions
        }
    }

    fn max_actions(&self) -> usize {
        self.params.actions
    }

    fn horizon(&self) -> usize {
        self.params.layers - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{rollout, UniformPolicy};

    #[test]
    fn two_layer_single_width_is_a_chain() {
        let mut m = generate_acyclic_mdp(1, 2, 1, 1, 1.0).unwrap();
        let ep = rollout::<f64, _, _>(&mut m, &UniformPolicy, 0).unwrap();
        assert_eq!(ep.len(), 1);
        assert_eq!(ep.state(1), &State::new(&[1, 0]));
        assert_eq!(m.true_prob(&State::new(&[0, 0]), Action(0), &State::new(&[1, 0])), 1.0);
    }

    #[test]
    fn same_seed_same_mdp() {
        let a = generate_acyclic_mdp(42, 5, 4, 3, 1.0).unwrap();
        let b = generate_acyclic_mdp(42, 5, 4, 3, 1.0).unwrap();
        assert_eq!(a, b);
        let c = generate_acyclic_mdp(43, 5, 4, 3, 1.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rows_are_normalized() {
        for seed in 0..20 {
            let m = generate_acyclic_mdp(seed, 6, 5, 3, 1.0).unwrap();
            for l in 0..5 {
                for i in 0..5 {
                    for a in 0..3 {
                        let s = State::new(&[l, i]);
                        let total: f64 = m.successors(&s, Action(a)).iter().map(|x| x.1).sum();
                        assert!((total - 1.0).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn episodes_climb_one_layer_per_step() {
        let mut m = generate_acyclic_mdp(7, 8, 6, 2, 1.0).unwrap();
        for seed in 0..10 {
            let ep = rollout::<f64, _, _>(&mut m, &UniformPolicy, seed).unwrap();
            assert_eq!(ep.len(), 7);
            for t in 0..=7 {
                assert_eq!(ep.state(t).component(0), t as i32);
            }
        }
    }
}
