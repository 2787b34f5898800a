//! The benchmark environments plus a random layered-MDP generator.

pub mod accumulated_charge;
pub mod chain_split;
pub mod key_to_door;
pub mod random_mdp;

use serde::{Deserialize, Serialize};

pub use accumulated_charge::{AccumulatedCharge, AccumulatedChargeParams};
pub use chain_split::{ChainAndSplit, ChainAndSplitParams};
pub use key_to_door::{KeyToDoor, KeyToDoorParams};
pub use random_mdp::{generate_acyclic_mdp, RandomAcyclicMdp, RandomMdpParams};

use crate::mdp::{Action, Environment, MdpError, Percept, State};
use crate::num::Scalar;
use crate::rng::StreamRng;

/// Environment selection as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    ChainAndSplit(#[serde(default)] ChainAndSplitParams),
    AccumulatedCharge(#[serde(default)] AccumulatedChargeParams),
    KeyToDoor(#[serde(default)] KeyToDoorParams),
    RandomAcyclic(#[serde(default)] RandomMdpParams),
}

impl EnvSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EnvSpec::ChainAndSplit(_) => "chain_and_split",
            EnvSpec::AccumulatedCharge(_) => "accumulated_charge",
            EnvSpec::KeyToDoor(_) => "key_to_door",
            EnvSpec::RandomAcyclic(_) => "random_acyclic",
        }
    }

    /// Instantiates the environment; `seed` fixes per-seed layout
    /// (Accumulated-Charge charge steps).
    pub fn build(&self, seed: u64) -> Result<AnyEnv, String> {
        Ok(match self {
            EnvSpec::ChainAndSplit(p) => AnyEnv::ChainAndSplit(ChainAndSplit::new(p.clone())?),
            EnvSpec::AccumulatedCharge(p) => AnyEnv::AccumulatedCharge(AccumulatedCharge::new(p.clone(), seed)?),
            EnvSpec::KeyToDoor(p) => AnyEnv::KeyToDoor(KeyToDoor::new(p.clone())?),
            EnvSpec::RandomAcyclic(p) => AnyEnv::RandomAcyclic(RandomAcyclicMdp::new(p.clone())?),
        })
    }
}

/// Closed set of environments, dispatched without boxing.
#[derive(Debug, Clone)]
pub enum AnyEnv {
    ChainAndSplit(ChainAndSplit),
    AccumulatedCharge(AccumulatedCharge),
    KeyToDoor(KeyToDoor),
    RandomAcyclic(RandomAcyclicMdp),
}

macro_rules! dispatch {
    ($self:expr, $e:ident => $body:expr) => {
        match $self {
            AnyEnv::ChainAndSplit($e) => $body,
            AnyEnv::AccumulatedCharge($e) => $body,
            AnyEnv::KeyToDoor($e) => $body,
            AnyEnv::RandomAcyclic($e) => $body,
        }
    };
}

impl<T: Scalar> Environment<T> for AnyEnv {
    fn name(&self) -> &'static str {
        dispatch!(self, e => Environment::<T>::name(e))
    }

    fn reset(&mut self, rng: &mut StreamRng) -> Percept<T> {
        dispatch!(self, e => e.reset(rng))
    }

    fn step(&mut self, action: Action, rng: &mut StreamRng) -> Result<(Percept<T>, bool), MdpError> {
        dispatch!(self, e => e.step(action, rng))
    }

    fn legal_actions(&self, state: &State) -> usize {
        dispatch!(self, e => Environment::<T>::legal_actions(e, state))
    }

    fn max_actions(&self) -> usize {
        dispatch!(self, e => Environment::<T>::max_actions(e))
    }

    fn horizon(&self) -> usize {
        dispatch!(self, e => Environment::<T>::horizon(e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specs_parse_by_name() {
        let s: EnvSpec = toml::from_str("name = \"chain_and_split\"\nchain_length = 5").unwrap();
        assert_eq!(s.name(), "chain_and_split");
        match s {
            EnvSpec::ChainAndSplit(p) => assert_eq!(p.chain_length, 5),
            _ => panic!(),
        }
        let s: EnvSpec = toml::from_str("name = \"key_to_door\"").unwrap();
        assert_eq!(s, EnvSpec::KeyToDoor(Default::default()));
        assert!(toml::from_str::<EnvSpec>("name = \"gridworld\"").is_err());
        assert!(toml::from_str::<EnvSpec>("name = \"key_to_door\"\nbogus = 1").is_err());
    }
}
