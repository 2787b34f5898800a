//! Key-to-Door with factored rewards.
//!
//! State components: `(key, door, d_1, ..., d_nd, treasure, time)`. Action 0
//! picks the key (only effective at the start), action 1 unlocks the door
//! (only effective at the door state, `time = H - 1`, while holding the
//! key). Every step returns one reward per state component:
//! `r = s' * (0, 0, 0.01/nd, ..., 0.01/nd, 0.01, 0)`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::mdp::{Action, Environment, MdpError, Percept, State};
use crate::num::Scalar;
use crate::rng::StreamRng;

pub const PICK_KEY: Action = Action(0);
pub const UNLOCK_DOOR: Action = Action(1);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyToDoorParams {
    pub horizon: usize,
    pub distractors: usize,
    pub distractor_prob: f64,
    pub treasure_reward: f64,
    /// Total reward if every distractor is on; each carries `1/nd` of it.
    pub distractor_reward: f64,
}

impl Default for KeyToDoorParams {
    fn default() -> Self {
        KeyToDoorParams {
            horizon: 100,
            distractors: 4,
            distractor_prob: 0.5,
            treasure_reward: 0.01,
            distractor_reward: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KeyToDoor {
    params: KeyToDoorParams,
    weights: Vec<f64>,
    current: State,
    done: bool,
}

impl KeyToDoor {
    pub fn new(params: KeyToDoorParams) -> Result<Self, String> {
        if params.horizon < 3 {
            return Err("key_to_door needs horizon >= 3".into());
        }
        if !(0.0..=1.0).contains(&params.distractor_prob) {
            return Err("distractor_prob must lie in [0, 1]".into());
        }
        let nd = params.distractors;
        let mut weights = vec![0.0; nd + 4];
        for w in &mut weights[2..2 + nd] {
            *w = params.distractor_reward / nd as f64;
        }
        weights[2 + nd] = params.treasure_reward;
        Ok(KeyToDoor { current: Self::start_state_for(nd), params, weights, done: true })
    }

    pub fn params(&self) -> &KeyToDoorParams {
        &self.params
    }

    /// Number of state (and reward) components, `nd + 4`.
    pub fn components(&self) -> usize {
        self.params.distractors + 4
    }

    pub fn key_index(&self) -> usize {
        0
    }

    pub fn door_index(&self) -> usize {
        1
    }

    pub fn distractor_range(&self) -> std::ops::Range<usize> {
        2..2 + self.params.distractors
    }

    pub fn treasure_index(&self) -> usize {
        2 + self.params.distractors
    }

    pub fn time_index(&self) -> usize {
        3 + self.params.distractors
    }

    /// Per-component reward weights.
    pub fn reward_weights(&self) -> &[f64] {
        &self.weights
    }

    fn start_state_for(nd: usize) -> State {
        State(SmallVec::from_elem(0, nd + 4))
    }

    pub fn start_state(&self) -> State {
        Self::start_state_for(self.params.distractors)
    }

    pub fn has_treasure(&self, state: &State) -> bool {
        state.component(self.treasure_index()) == 1
    }

    fn reward_vector<T: Scalar>(&self, s: &State) -> SmallVec<[T; 8]> {
        s.components()
            .iter()
            .zip(&self.weights)
            .map(|(&c, &w)| T::lit(c as f64 * w))
            .collect()
    }
}

impl<T: Scalar> Environment<T> for KeyToDoor {
    fn name(&self) -> &'static str {
        "key_to_door"
    }

    fn reset(&mut self, _rng: &mut StreamRng) -> Percept<T> {
        self.current = self.start_state();
        self.done = false;
        let zeros: SmallVec<[T; 8]> = SmallVec::from_elem(T::zero(), self.components());
        Percept::with_components(self.current.clone(), &zeros)
    }

    fn step(&mut self, action: Action, rng: &mut StreamRng) -> Result<(Percept<T>, bool), MdpError> {
        if self.done {
            return Err(MdpError::Terminated);
        }
        if action.0 >= 2 {
            return Err(MdpError::IllegalAction { state: self.current.clone(), action });
        }
        let h = self.params.horizon as i32;
        let s = &self.current;
        let t = s.component(self.time_index());
        let key = s.component(0) == 1 || (t == 0 && action == PICK_KEY);
        let at_door = s.component(1) == 1;
        let treasure = t == h - 1 && at_door && key && action == UNLOCK_DOOR;
        let next_t = t + 1;
        let door = next_t == h - 1;

        let mut next: SmallVec<[i32; 8]> = SmallVec::from_elem(0, self.components());
        next[0] = key as i32;
        next[1] = door as i32;
        if !door && !treasure {
            for i in self.distractor_range() {
                next[i] = rng.random_bool(self.params.distractor_prob) as i32;
            }
        }
        let ti = self.treasure_index();
        next[ti] = treasure as i32;
        next[ti + 1] = next_t;
        let done = next_t == h;
        self.current = State(next);
        self.done = done;
        let rv = self.reward_vector::<T>(&self.current);
        Ok((Percept::with_components(self.current.clone(), &rv), done))
    }

    fn legal_actions(&self, state: &State) -> usize {
        if state.component(self.time_index()) >= self.params.horizon as i32 {
            0
        } else {
            2
        }
    }

    fn max_actions(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        self.params.horizon
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{rollout, FixedActionPolicy, Policy, ActionDist};
    use crate::rng;

    fn optimal(env: &KeyToDoor) -> impl Fn(&State, usize) -> Result<ActionDist<f64>, MdpError> + '_ {
        move |s: &State, legal| {
            let a = if s.component(env.time_index()) == 0 { PICK_KEY } else { UNLOCK_DOOR };
            <FixedActionPolicy as Policy<f64>>::distribution(&FixedActionPolicy(a), s, legal)
        }
    }

    #[test]
    fn pick_key_at_start_sets_key() {
        let mut env = KeyToDoor::new(Default::default()).unwrap();
        let mut r = rng::stream(0, &[]);
        let _ = Environment::<f64>::reset(&mut env, &mut r);
        let (p, done) = Environment::<f64>::step(&mut env, PICK_KEY, &mut r).unwrap();
        assert_eq!(p.state.component(0), 1);
        assert!(!done);
    }

    #[test]
    fn optimal_policy_collects_treasure() {
        let env0 = KeyToDoor::new(Default::default()).unwrap();
        let policy = optimal(&env0);
        let mut env = env0.clone();
        let ep = rollout(&mut env, &policy, 5).unwrap();
        assert_eq!(ep.len(), 100);
        let last = ep.percepts.last().unwrap();
        assert!(env0.has_treasure(&last.state));
        let rv = last.reward_vector.as_ref().unwrap();
        assert_eq!(rv[env0.treasure_index()], 0.01);
        // Distractors are off in the door and treasure states.
        let door = &ep.percepts[99].state;
        assert_eq!(door.component(1), 1);
        assert!(env0.distractor_range().all(|i| door.component(i) == 0));
        assert!(env0.distractor_range().all(|i| last.state.component(i) == 0));
    }

    #[test]
    fn never_picking_key_never_finds_treasure() {
        let mut env = KeyToDoor::new(Default::default()).unwrap();
        for seed in 0..5 {
            let ep = rollout::<f64, _, _>(&mut env, &FixedActionPolicy(UNLOCK_DOOR), seed).unwrap();
            let last = ep.percepts.last().unwrap();
            assert_eq!(last.state.component(6), 0);
            assert_eq!(last.reward_vector.as_ref().unwrap()[6], 0.0);
        }
    }

    #[test]
    fn reward_vector_sums_to_reward() {
        let mut env = KeyToDoor::new(Default::default()).unwrap();
        let ep = rollout::<f64, _, _>(&mut env, &crate::mdp::UniformPolicy, 9).unwrap();
        for p in &ep.percepts {
            let rv = p.reward_vector.as_ref().unwrap();
            assert!((rv.iter().sum::<f64>() - p.reward).abs() < 1e-12);
            for (i, (&c, &w)) in p.state.components().iter().zip(env.reward_weights()).enumerate() {
                assert_eq!(rv[i], c as f64 * w);
            }
        }
    }
}
