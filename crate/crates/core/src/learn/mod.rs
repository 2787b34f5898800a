//! Online eligibility-trace learners.
//!
//! Every learner takes the per-step trace decay `lambda` from its caller;
//! the `chunked_*` functions compute it from a dynamics model, the
//! constant-λ baselines pass a fixed value.

pub mod chunked;
pub mod sutton_singh;
pub mod tables;

use thiserror::Error;

pub use chunked::{
    chunked_expected_sarsa_step, chunked_factored_step, chunked_sarsa_step, chunked_td_v_step, Bootstrap,
    FactoredQLearner, QStep, TabularQLearner, ValueLearner,
};
pub use sutton_singh::{SuttonSinghState, TdOneOverN, Tdc};
pub use tables::{FactoredQTables, StateIndex, TabularQTable, TabularValueTable, Traces};

use crate::mdp::{MdpError, State};
use crate::model::ModelError;
use crate::num::{is_probability, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnError {
    #[error("lambda {0} is outside [0, 1]")]
    LambdaOutOfRange(f64),
    #[error("step size {0} must be positive and finite")]
    BadStepSize(f64),
    #[error("transition carries no reward vector")]
    MissingRewardVector,
    #[error("expected {expected} components, got {got}")]
    ComponentMismatch { expected: usize, got: usize },
    #[error("no policy given for non-terminal state {0}")]
    PolicyUndefined(State),
    #[error("state {0} revisited within an episode; the MDP must be acyclic")]
    Cyclic(State),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

pub(crate) fn check_lambda<T: Scalar>(lambda: T) -> Result<T, LearnError> {
    if is_probability(lambda) {
        Ok(lambda)
    } else {
        Err(LearnError::LambdaOutOfRange(lambda.to_f64_lossy()))
    }
}

pub(crate) fn check_alpha<T: Scalar>(alpha: T) -> Result<T, LearnError> {
    if alpha > T::zero() && alpha.is_finite() {
        Ok(alpha)
    } else {
        Err(LearnError::BadStepSize(alpha.to_f64_lossy()))
    }
}
