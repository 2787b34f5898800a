//! Chain-and-Split: one delayed deterministic reward against a noisy subtree.
//!
//! ```text
//! start --a1--> c1 -> c2 -> ... -> cH --(+0.01)--> goal
//!   \--a2..an--> sL --(uniform)--> b_j (+r_j) --> end
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::{Action, Environment, MdpError, Percept, State};
use crate::num::Scalar;
use crate::rng::StreamRng;

const START: i32 = 0;
const CHAIN: i32 = 1;
const LEFT: i32 = 2;
const BRANCH: i32 = 3;
const TERMINAL: i32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainAndSplitParams {
    pub chain_length: usize,
    pub root_actions: usize,
    pub branch_width: usize,
    pub chain_reward: f64,
    /// Explicit branch rewards; the evenly spaced grid on `[-1, 1]` when absent.
    pub branch_rewards: Option<Vec<f64>>,
}

impl Default for ChainAndSplitParams {
    fn default() -> Self {
        ChainAndSplitParams {
            chain_length: 20,
            root_actions: 10,
            branch_width: 101,
            chain_reward: 0.01,
            branch_rewards: None,
        }
    }
}

/// `r_j = -1 + 2j/(w-1)`: zero mean, every value in `[-1, 1]`.
pub fn grid_branch_rewards(width: usize) -> Vec<f64> {
    if width == 1 {
        return vec![0.0];
    }
    let w = (width - 1) as f64;
    let mut r: Vec<f64> = (0..width).map(|j| -1.0 + 2.0 * j as f64 / w).collect();
    // Mirror the upper half so the grid is exactly symmetric about zero.
    for j in 0..width / 2 {
        r[width - 1 - j] = -r[j];
    }
    if width % 2 == 1 {
        r[width / 2] = 0.0;
    }
    r
}

#[derive(Debug, Clone)]
pub struct ChainAndSplit {
    params: ChainAndSplitParams,
    branch_rewards: Vec<f64>,
    current: State,
    done: bool,
}

impl ChainAndSplit {
    pub fn new(params: ChainAndSplitParams) -> Result<Self, String> {
        if params.chain_length == 0 || params.root_actions < 2 || params.branch_width == 0 {
            return Err("chain_and_split needs chain_length >= 1, root_actions >= 2, branch_width >= 1".into());
        }
        let branch_rewards = params
            .branch_rewards
            .clone()
            .unwrap_or_else(|| grid_branch_rewards(params.branch_width));
        if branch_rewards.len() != params.branch_width {
            return Err(format!(
                "{} branch rewards for branch_width {}",
                branch_rewards.len(),
                params.branch_width
            ));
        }
        if branch_rewards.iter().any(|r| !(-1.0..=1.0).contains(r)) {
            return Err("branch rewards must lie in [-1, 1]".into());
        }
        Ok(ChainAndSplit { params, branch_rewards, current: Self::start_state(), done: true })
    }

    pub fn params(&self) -> &ChainAndSplitParams {
        &self.params
    }

    pub fn branch_rewards(&self) -> &[f64] {
        &self.branch_rewards
    }

    pub fn start_state() -> State {
        State::new(&[START, 0])
    }

    pub fn left_state() -> State {
        State::new(&[LEFT, 0])
    }

    pub fn chain_state(i: usize) -> State {
        State::new(&[CHAIN, i as i32])
    }

    pub fn branch_state(j: usize) -> State {
        State::new(&[BRANCH, j as i32])
    }

    pub fn root_actions(&self) -> usize {
        self.params.root_actions
    }

    /// Ground-truth first-action values: `a1` earns the chain reward, every
    /// other action the mean branch reward.
    pub fn expected_first_action_values(&self) -> Vec<(Action, f64)> {
        let mean = self.branch_rewards.iter().sum::<f64>() / self.branch_rewards.len() as f64;
        (0..self.params.root_actions)
            .map(|a| (Action(a), if a == 0 { self.params.chain_reward } else { mean }))
            .collect()
    }
}

impl<T: Scalar> Environment<T> for ChainAndSplit {
    fn name(&self) -> &'static str {
        "chain_and_split"
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
        let legal = <Self as Environment<T>>::legal_actions(self, &self.current);
        if action.0 >= legal {
            return Err(MdpError::IllegalAction { state: self.current.clone(), action });
        }
        let (kind, idx) = (self.current.component(0), self.current.component(1));
        let h = self.params.chain_length as i32;
        let (next, reward, done) = match kind {
            START if action.0 == 0 => (Self::chain_state(1), 0.0, false),
            START => (Self::left_state(), 0.0, false),
            CHAIN if idx < h => (Self::chain_state(idx as usize + 1), 0.0, false),
            CHAIN => (State::new(&[TERMINAL, 0]), self.params.chain_reward, true),
            LEFT => {
                let j = rng.random_range(0..self.params.branch_width);
                (Self::branch_state(j), self.branch_rewards[j], false)
            }
            BRANCH => (State::new(&[TERMINAL, 1]), 0.0, true),
            _ => return Err(MdpError::Terminated),
        };
        self.current = next;
        self.done = done;
        Ok((Percept::new(T::lit(reward), self.current.clone()), done))
    }

    fn legal_actions(&self, state: &State) -> usize {
        match state.component(0) {
            START => self.params.root_actions,
            TERMINAL => 0,
            _ => 1,
        }
    }

    fn max_actions(&self) -> usize {
        self.params.root_actions
    }

    fn horizon(&self) -> usize {
        self.params.chain_length + 1
    }
}
