//! Accumulated-Charge: a first choice whose bonus is buried under the noise
//! of a few stochastic charging steps.
//!
//! State components are `(chose_a1, charge, time)`. The charging time steps
//! are fixed per environment seed; the final reward at `H` is
//! `s1 * b + c0 * charge - c0 * p * H` with `c0 = +0.5` after `a1` and
//! `-0.5` after `a2`.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::mdp::{Action, Environment, MdpError, Percept, State};
use crate::num::Scalar;
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccumulatedChargeParams {
    pub horizon: usize,
    pub charge_steps: usize,
    pub charge_prob: f64,
    pub bonus: f64,
}

impl Default for AccumulatedChargeParams {
    fn default() -> Self {
        AccumulatedChargeParams { horizon: 200, charge_steps: 10, charge_prob: 0.5, bonus: 0.1 }
    }
}

#[derive(Debug, Clone)]
pub struct AccumulatedCharge {
    params: AccumulatedChargeParams,
    /// Sorted time indices `t` whose transition `t -> t+1` accumulates charge.
    charge_times: Vec<usize>,
    is_charge_time: Vec<bool>,
    binomial: Binomial,
    current: State,
    done: bool,
}

impl AccumulatedCharge {
    /// Builds the environment; `layout_seed` fixes the charging steps.
    pub fn new(params: AccumulatedChargeParams, layout_seed: u64) -> Result<Self, String> {
        let h = params.horizon;
        let k = params.charge_steps;
        if h < 2 || k == 0 || k > h - 1 {
            return Err(format!("accumulated_charge needs 1 <= charge_steps <= horizon - 1 (got {k}, {h})"));
        }
        if !(0.0..=1.0).contains(&params.charge_prob) {
            return Err("charge_prob must lie in [0, 1]".into());
        }
        let mut r = rng::stream(layout_seed, &[rng::tag::ENV_LAYOUT]);
        // Steps are drawn from {1, ..., H-1}: the first transition is the choice.
        let mut charge_times: Vec<usize> = index::sample(&mut r, h - 1, k).into_iter().map(|i| i + 1).collect();
        charge_times.sort_unstable();
        let mut is_charge_time = vec![false; h];
        for &t in &charge_times {
            is_charge_time[t] = true;
        }
        let binomial = Binomial::new((h / k) as u64, params.charge_prob).map_err(|e| e.to_string())?;
        Ok(AccumulatedCharge {
            params,
            charge_times,
            is_charge_time,
            binomial,
            current: State::new(&[0, 0, 0]),
            done: true,
        })
    }

    pub fn params(&self) -> &AccumulatedChargeParams {
        &self.params
    }

    pub fn charge_times(&self) -> &[usize] {
        &self.charge_times
    }

    /// Binomial trials per charging step (`H / k`).
    pub fn trials_per_step(&self) -> usize {
        self.params.horizon / self.params.charge_steps
    }

    pub fn start_state() -> State {
        State::new(&[0, 0, 0])
    }

    /// `R_H = R^b + R^c + R^d` for the terminal components.
    pub fn final_reward(&self, chose_a1: bool, charge: i64) -> f64 {
        let p = &self.params;
        let c0 = if chose_a1 { 0.5 } else { -0.5 };
        let bonus = if chose_a1 { p.bonus } else { 0.0 };
        bonus + c0 * charge as f64 - c0 * p.charge_prob * p.horizon as f64
    }

    /// Expected return of each first action.
    pub fn expected_first_action_values(&self) -> Vec<(Action, f64)> {
        let p = &self.params;
        let mean_charge = (p.charge_steps * self.trials_per_step()) as f64 * p.charge_prob;
        let bias = mean_charge - p.charge_prob * p.horizon as f64;
        vec![(Action(0), p.bonus + 0.5 * bias), (Action(1), -0.5 * bias)]
    }
}

impl<T: Scalar> Environment<T> for AccumulatedCharge {
    fn name(&self) -> &'static str {
        "accumulated_charge"
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
        let t = self.current.component(2) as usize;
        let legal = if t == 0 { 2 } else { 1 };
        if action.0 >= legal {
            return Err(MdpError::IllegalAction { state: self.current.clone(), action });
        }
        let chose_a1 = if t == 0 { action.0 == 0 } else { self.current.component(0) == 1 };
        let mut charge = self.current.component(1) as i64;
        if self.is_charge_time[t] {
            charge += self.binomial.sample(rng) as i64;
        }
        let next_t = t + 1;
        let done = next_t == self.params.horizon;
        let reward = if done { self.final_reward(chose_a1, charge) } else { 0.0 };
        self.current = State::new(&[chose_a1 as i32, charge as i32, next_t as i32]);
        self.done = done;
        Ok((Percept::new(T::lit(reward), self.current.clone()), done))
    }

    fn legal_actions(&self, state: &State) -> usize {
        let t = state.component(2) as usize;
        if t >= self.params.horizon {
            0
        } else if t == 0 {
            2
        } else {
            1
        }
    }

    fn max_actions(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        self.params.horizon
    }
}

/// Draws one uniform layout seed per call; used by tests that need many
/// independent environment instances.
pub fn random_layout_seed(rng: &mut StreamRng) -> u64 {
    rng.random()
}
