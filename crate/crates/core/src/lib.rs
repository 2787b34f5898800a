//! Chunked temporal-difference learning.
//!
//! Learners decay eligibility traces by a learned model's probability of
//! each observed transition, so predictable stretches of an episode are
//! treated as a single chunk and bootstrapping happens only at surprises.
//! The crate carries the environments, count and neural models, the
//! learners and their baselines, offline oracles used to check them, and
//! the experiment harness.
//!
//! Everything numeric is generic over [`num::Scalar`] (`f32` or `f64`); the
//! aliases below fix the common instantiations.

pub mod env;
pub mod harness;
pub mod learn;
pub mod mdp;
pub mod model;
pub mod nn;
pub mod num;
pub mod oracle;
pub mod rng;

pub use num::Scalar;

pub type Episode64 = mdp::Episode<f64>;
pub type Episode32 = mdp::Episode<f32>;
pub type ActionDist64 = mdp::ActionDist<f64>;
pub type ActionDist32 = mdp::ActionDist<f32>;
pub type ValueLearner64 = learn::ValueLearner<f64>;
pub type ValueLearner32 = learn::ValueLearner<f32>;
pub type QLearner64 = learn::TabularQLearner<f64>;
pub type QLearner32 = learn::TabularQLearner<f32>;
pub type FactoredQLearner64 = learn::FactoredQLearner<f64>;
pub type FactoredQLearner32 = learn::FactoredQLearner<f32>;
pub type Mlp64 = nn::Mlp<f64>;
pub type Mlp32 = nn::Mlp<f32>;
pub type NeuralModel32 = model::NeuralModel<f32>;
pub type NeuralModel64 = model::NeuralModel<f64>;
