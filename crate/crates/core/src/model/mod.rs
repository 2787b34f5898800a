//! Dynamics models that supply the chunking probabilities.

pub mod count;
pub mod neural;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

pub use count::{ComponentCondition, FactoredCountModel, TabularCountModel, Target};
pub use neural::{ComponentHead, InputEncoding, NeuralModel, NeuralModelConfig};

use crate::env::{AnyEnv, EnvSpec};
use crate::mdp::{Action, ActionDist, State};
use crate::nn::NnError;
use crate::num::{is_probability, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("model returned {value}, which is not a probability")]
    NotAProbability { value: f64 },
    #[error("state has {got} components, model expects {expected}")]
    ComponentMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Network(#[from] NnError),
    #[error("model/environment mismatch: {0}")]
    Unsupported(String),
}

/// `P̂(x' | x, a)` together with its per-component factors.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredModelOutput<T> {
    pub components: SmallVec<[T; 8]>,
    pub joint: T,
}

impl<T: Scalar> FactoredModelOutput<T> {
    /// Independent components: the joint is their product.
    pub fn independent(components: SmallVec<[T; 8]>) -> Self {
        let joint = components.iter().fold(T::one(), |acc, &p| acc * p);
        FactoredModelOutput { components, joint }
    }

    pub fn check(&self) -> Result<(), ModelError> {
        for &p in self.components.iter().chain(std::iter::once(&self.joint)) {
            if !is_probability(p) {
                return Err(ModelError::NotAProbability { value: p.to_f64_lossy() });
            }
        }
        Ok(())
    }
}

/// Anything that yields `P̂(x' | x, a)`; the derived policy-marginal and
/// SARSA-joint probabilities are provided on top.
pub trait LambdaSource<T: Scalar> {
    /// Records a transition. Called before the transition is queried.
    fn observe(&mut self, _x: &State, _a: Action, _next: &State) -> Result<(), ModelError> {
        Ok(())
    }

    fn predict(&self, x: &State, a: Action, next: &State) -> Result<FactoredModelOutput<T>, ModelError>;

    fn next_percept_prob(&self, x: &State, a: Action, next: &State) -> Result<T, ModelError> {
        Ok(self.predict(x, a, next)?.joint)
    }

    /// `sum_a P̂(x' | x, a) pi(a | x)`.
    fn policy_marginal_prob(&self, x: &State, next: &State, pi: &ActionDist<T>) -> Result<T, ModelError> {
        let mut total = T::zero();
        for (a, &p) in pi.probs().iter().enumerate() {
            if p > T::zero() {
                total += p * self.next_percept_prob(x, Action(a), next)?;
            }
        }
        Ok(total.min(T::one()))
    }

    /// Per-component `sum_a P̂(x'_i | x, a) pi(a | x)`.
    fn component_marginal_probs(
        &self,
        x: &State,
        next: &State,
        pi: &ActionDist<T>,
    ) -> Result<SmallVec<[T; 8]>, ModelError> {
        let mut total: SmallVec<[T; 8]> = SmallVec::new();
        for (a, &p) in pi.probs().iter().enumerate() {
            if p > T::zero() {
                let out = self.predict(x, Action(a), next)?;
                if total.is_empty() {
                    total.resize(out.components.len(), T::zero());
                }
                for (t, &c) in total.iter_mut().zip(&out.components) {
                    *t += p * c;
                }
            }
        }
        for t in total.iter_mut() {
            *t = t.min(T::one());
        }
        Ok(total)
    }

    /// `P̂(x' | x, a) * pi(a' | x')`, with `pi_next` the second factor.
    fn sarsa_joint_prob(&self, x: &State, a: Action, next: &State, pi_next: T) -> Result<T, ModelError> {
        Ok(self.next_percept_prob(x, a, next)? * pi_next)
    }
}

/// `sum_a P̂(x' | x, a) pi(a | x)` for any source.
pub fn policy_marginal_prob<T: Scalar, M: LambdaSource<T> + ?Sized>(
    model: &M,
    x: &State,
    next: &State,
    pi: &ActionDist<T>,
) -> Result<T, ModelError> {
    model.policy_marginal_prob(x, next, pi)
}

/// `P̂(x' | x, a) * pi(a' | x')`.
pub fn sarsa_joint_prob<T: Scalar, M: LambdaSource<T> + ?Sized>(
    model: &M,
    x: &State,
    a: Action,
    next: &State,
    pi_next: T,
) -> Result<T, ModelError> {
    model.sarsa_joint_prob(x, a, next, pi_next)
}

/// A fixed probability function, e.g. ground truth or a test fixture.
pub struct FnModel<F>(pub F);

impl<T: Scalar, F> LambdaSource<T> for FnModel<F>
where
    F: Fn(&State, Action, &State) -> T,
{
    fn predict(&self, x: &State, a: Action, next: &State) -> Result<FactoredModelOutput<T>, ModelError> {
        let p = (self.0)(x, a, next);
        Ok(FactoredModelOutput { components: smallvec::smallvec![p], joint: p })
    }
}

/// Returns the same probability for every query.
#[derive(Debug, Clone, Copy)]
pub struct ConstantModel<T>(pub T);

impl<T: Scalar> LambdaSource<T> for ConstantModel<T> {
    fn predict(&self, x: &State, _a: Action, _next: &State) -> Result<FactoredModelOutput<T>, ModelError> {
        Ok(FactoredModelOutput { components: smallvec::smallvec![self.0; x.len().max(1)], joint: self.0 })
    }
}

/// Model selection as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    TabularCount,
    /// Count tables per state component, each conditioned on a projection
    /// of `(x, a)`. `components` defaults to the environment preset.
    FactoredCount {
        #[serde(default)]
        components: Option<Vec<ComponentCondition>>,
    },
    NeuralDelta(#[serde(default)] NeuralModelConfig),
    NeuralFactored(#[serde(default)] NeuralModelConfig),
}

impl ModelSpec {
    pub fn build<T: Scalar>(&self, env: &EnvSpec, built: &AnyEnv, seed: u64) -> Result<AnyModel, ModelError> {
        let _ = built;
        Ok(match self {
            ModelSpec::TabularCount => AnyModel::Tabular(TabularCountModel::new()),
            ModelSpec::FactoredCount { components } => {
                let comps = match components {
                    Some(c) => c.clone(),
                    None => count::preset_conditions(env)?,
                };
                AnyModel::Factored(FactoredCountModel::new(comps))
            }
            ModelSpec::NeuralDelta(cfg) => AnyModel::Neural(Box::new(NeuralModel::delta_for(env, cfg, seed)?)),
            ModelSpec::NeuralFactored(cfg) => {
                AnyModel::Neural(Box::new(NeuralModel::factored_for(env, cfg, seed)?))
            }
        })
    }
}

/// Closed set of models used by the harness.
pub enum AnyModel {
    Tabular(TabularCountModel),
    Factored(FactoredCountModel),
    Neural(Box<NeuralModel<f32>>),
}

impl<T: Scalar> LambdaSource<T> for AnyModel {
    fn observe(&mut self, x: &State, a: Action, next: &State) -> Result<(), ModelError> {
        match self {
            AnyModel::Tabular(m) => LambdaSource::<T>::observe(m, x, a, next),
            AnyModel::Factored(m) => LambdaSource::<T>::observe(m, x, a, next),
            AnyModel::Neural(m) => LambdaSource::<T>::observe(m.as_mut(), x, a, next),
        }
    }

    fn predict(&self, x: &State, a: Action, next: &State) -> Result<FactoredModelOutput<T>, ModelError> {
        match self {
            AnyModel::Tabular(m) => m.predict(x, a, next),
            AnyModel::Factored(m) => m.predict(x, a, next),
            AnyModel::Neural(m) => m.predict(x, a, next),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(i: i32) -> State {
        State::new(&[i])
    }

    #[test]
    fn policy_marginal_examples() {
        let m = FnModel(|_: &State, a: Action, _: &State| if a.0 == 0 { 1.0 } else { 0.0 });
        let pi = ActionDist::<f64>::uniform(2).unwrap();
        assert_eq!(policy_marginal_prob(&m, &s(0), &s(1), &pi).unwrap(), 0.5);

        let m = FnModel(|_: &State, _: Action, _: &State| 1.0);
        let pi = ActionDist::<f64>::uniform(3).unwrap();
        assert!((policy_marginal_prob(&m, &s(0), &s(1), &pi).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sarsa_joint_examples() {
        let one = ConstantModel(1.0f64);
        assert_eq!(sarsa_joint_prob(&one, &s(0), Action(0), &s(1), 0.1).unwrap(), 0.1);
        let half = ConstantModel(0.5f64);
        assert_eq!(sarsa_joint_prob(&half, &s(0), Action(0), &s(1), 0.5).unwrap(), 0.25);
        assert_eq!(sarsa_joint_prob(&one, &s(0), Action(0), &s(1), 1.0).unwrap(), 1.0);
    }

    #[test]
    fn independent_joint_is_product() {
        let out = FactoredModelOutput::independent(smallvec::smallvec![0.5f64, 0.5]);
        assert_eq!(out.joint, 0.25);
        assert!(out.check().is_ok());
        let bad = FactoredModelOutput { components: smallvec::smallvec![1.5f64], joint: 1.5 };
        assert!(bad.check().is_err());
    }

    proptest::proptest! {
        #[test]
        fn policy_marginal_is_convex(
            probs in proptest::collection::vec(0.0f64..=1.0, 1..5),
            weights in proptest::collection::vec(0.01f64..1.0, 1..5),
        ) {
            let n = probs.len().min(weights.len());
            let total: f64 = weights[..n].iter().sum();
            let pi = ActionDist(weights[..n].iter().map(|w| w / total).collect());
            let p = probs[..n].to_vec();
            let m = FnModel(move |_: &State, a: Action, _: &State| p[a.0]);
            let v = policy_marginal_prob(&m, &s(0), &s(1), &pi).unwrap();
            let lo = probs[..n].iter().copied().fold(f64::INFINITY, f64::min);
            let hi = probs[..n].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            proptest::prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}
