//! Neural transition model: an MLP over `(x, a)` with one output head per
//! state component, trained online from a replay buffer.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use super::{FactoredModelOutput, LambdaSource, ModelError};
use crate::env::EnvSpec;
use crate::mdp::{Action, State};
use crate::nn::{AdamConfig, HeadSpec, Mlp, MlpSpec, NetScalar, ReplayBuffer, Trainer, Workspace};
use crate::num::Scalar;
use crate::rng::{self, StreamRng};

/// How one state component enters the network input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputEncoding {
    Scalar { scale: f64 },
    OneHot { classes: usize, offset: i32 },
}

impl InputEncoding {
    fn width(self) -> usize {
        match self {
            InputEncoding::Scalar { .. } => 1,
            InputEncoding::OneHot { classes, .. } => classes,
        }
    }
}

/// The output distribution for one next-state component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ComponentHead {
    /// `x'_i` in `{0, 1}`.
    Bernoulli,
    /// Class `(x'_i - offset)`, or `(x'_i - x_i - offset)` when `delta`.
    Categorical { classes: usize, offset: i32, delta: bool },
}

impl ComponentHead {
    fn spec(self) -> HeadSpec {
        match self {
            ComponentHead::Bernoulli => HeadSpec::Bernoulli,
            ComponentHead::Categorical { classes, .. } => HeadSpec::Categorical(classes),
        }
    }

    /// Target class, clamped into the support; the flag reports clamping.
    fn target(self, x: i32, next: i32) -> (u32, bool) {
        let (raw, hi) = match self {
            ComponentHead::Bernoulli => (next as i64, 1i64),
            ComponentHead::Categorical { classes, offset, delta } => {
                let v = if delta { next - x } else { next };
                ((v - offset) as i64, classes as i64 - 1)
            }
        };
        let c = raw.clamp(0, hi);
        (c as u32, c != raw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuralModelConfig {
    pub hidden: Option<Vec<usize>>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub train_every: Option<usize>,
    pub batch_size: Option<usize>,
    pub buffer_size: Option<usize>,
    /// Floor applied to every predicted probability.
    pub min_prob: f64,
    pub inputs: Option<Vec<InputEncoding>>,
    pub heads: Option<Vec<ComponentHead>>,
}

impl Default for NeuralModelConfig {
    fn default() -> Self {
        NeuralModelConfig {
            hidden: None,
            learning_rate: None,
            weight_decay: None,
            train_every: None,
            batch_size: None,
            buffer_size: None,
            min_prob: 1e-8,
            inputs: None,
            heads: None,
        }
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralSettings {
    pub hidden: Vec<usize>,
    pub adam: AdamConfig,
    pub train_every: usize,
    pub batch_size: usize,
    pub buffer_size: usize,
    pub min_prob: f64,
    pub inputs: Vec<InputEncoding>,
    pub actions: usize,
    pub heads: Vec<ComponentHead>,
}

impl NeuralModelConfig {
    fn resolve(&self, base: NeuralSettings) -> NeuralSettings {
        NeuralSettings {
            hidden: self.hidden.clone().unwrap_or(base.hidden),
            adam: AdamConfig {
                lr: self.learning_rate.unwrap_or(base.adam.lr),
                weight_decay: self.weight_decay.unwrap_or(base.adam.weight_decay),
                ..base.adam
            },
            train_every: self.train_every.unwrap_or(base.train_every),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            buffer_size: self.buffer_size.unwrap_or(base.buffer_size),
            min_prob: self.min_prob,
            inputs: self.inputs.clone().unwrap_or(base.inputs),
            actions: base.actions,
            heads: self.heads.clone().unwrap_or(base.heads),
        }
    }
}

type Sample<N> = (Box<[N]>, SmallVec<[u32; 8]>);

pub struct NeuralModel<N: NetScalar> {
    settings: NeuralSettings,
    net: Mlp<N>,
    trainer: Trainer<N>,
    replay: ReplayBuffer<Sample<N>>,
    rng: StreamRng,
    observed: u64,
    clamped: AtomicU64,
    last_loss: Option<f64>,
    scratch: RefCell<(Vec<N>, Workspace<N>)>,
}

impl<N: NetScalar> NeuralModel<N> {
    pub fn new(settings: NeuralSettings, seed: u64) -> Result<Self, ModelError> {
        if settings.train_every == 0 || settings.batch_size == 0 || settings.buffer_size == 0 {
            return Err(ModelError::Unsupported("train_every, batch_size and buffer_size must be positive".into()));
        }
        let input = settings.inputs.iter().map(|e| e.width()).sum::<usize>() + settings.actions;
        let spec = MlpSpec {
            input,
            hidden: settings.hidden.clone(),
            heads: settings.heads.iter().map(|h| h.spec()).collect(),
        };
        let mut init = rng::stream(seed, &[rng::tag::MODEL]);
        let net = Mlp::new(spec, &mut init)?;
        let trainer = Trainer::new(settings.adam, &net);
        Ok(NeuralModel {
            replay: ReplayBuffer::new(settings.buffer_size),
            rng: rng::stream(seed, &[rng::tag::REPLAY]),
            settings,
            net,
            trainer,
            observed: 0,
            clamped: AtomicU64::new(0),
            last_loss: None,
            scratch: RefCell::new((Vec::new(), Workspace::default())),
        })
    }

    /// Categorical delta heads for Accumulated-Charge.
    pub fn delta_for(env: &EnvSpec, cfg: &NeuralModelConfig, seed: u64) -> Result<Self, ModelError> {
        let EnvSpec::AccumulatedCharge(p) = env else {
            return Err(ModelError::Unsupported(format!("neural_delta has no preset for {}", env.name())));
        };
        let classes = p.horizon / p.charge_steps + 1;
        let base = NeuralSettings {
            hidden: vec![256; 3],
            adam: AdamConfig { lr: 1e-4, weight_decay: 1e-6, ..Default::default() },
            train_every: 4,
            batch_size: 128,
            buffer_size: 100_000,
            min_prob: 1e-8,
            inputs: vec![
                InputEncoding::Scalar { scale: 1.0 },
                InputEncoding::Scalar { scale: 1.0 / (p.charge_prob * p.horizon as f64).max(1.0) },
                InputEncoding::Scalar { scale: 1.0 / p.horizon as f64 },
            ],
            actions: 2,
            heads: vec![ComponentHead::Categorical { classes, offset: 0, delta: true }; 3],
        };
        Self::new(cfg.resolve(base), seed)
    }

    /// Bernoulli heads for the boolean components and an `H`-way time head
    /// for Key-to-Door.
    pub fn factored_for(env: &EnvSpec, cfg: &NeuralModelConfig, seed: u64) -> Result<Self, ModelError> {
        let EnvSpec::KeyToDoor(p) = env else {
            return Err(ModelError::Unsupported(format!("neural_factored has no preset for {}", env.name())));
        };
        let booleans = p.distractors + 3;
        let mut inputs = vec![InputEncoding::Scalar { scale: 1.0 }; booleans];
        inputs.push(InputEncoding::OneHot { classes: p.horizon, offset: 0 });
        let mut heads = vec![ComponentHead::Bernoulli; booleans];
        heads.push(ComponentHead::Categorical { classes: p.horizon, offset: 1, delta: false });
        let base = NeuralSettings {
            hidden: vec![128; 2],
            adam: AdamConfig { lr: 2e-4, weight_decay: 0.0, ..Default::default() },
            train_every: 1,
            batch_size: 64,
            buffer_size: 10_000,
            min_prob: 1e-8,
            inputs,
            actions: 2,
            heads,
        };
        Self::new(cfg.resolve(base), seed)
    }

    pub fn settings(&self) -> &NeuralSettings {
        &self.settings
    }

    pub fn network(&self) -> &Mlp<N> {
        &self.net
    }

    /// Observations whose target fell outside a head's support.
    pub fn clamped_targets(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.last_loss
    }

    fn check(&self, s: &State) -> Result<(), ModelError> {
        if s.len() != self.settings.inputs.len() {
            return Err(ModelError::ComponentMismatch { expected: self.settings.inputs.len(), got: s.len() });
        }
        Ok(())
    }

    fn encode_into(&self, x: &State, a: Action, out: &mut Vec<N>) {
        out.clear();
        for (enc, &v) in self.settings.inputs.iter().zip(x.components()) {
            match *enc {
                InputEncoding::Scalar { scale } => out.push(N::lit(v as f64 * scale)),
                InputEncoding::OneHot { classes, offset } => {
                    let k = ((v - offset) as i64).clamp(0, classes as i64 - 1) as usize;
                    out.extend((0..classes).map(|j| if j == k { N::one() } else { N::zero() }));
                }
            }
        }
        out.extend((0..self.settings.actions).map(|j| if j == a.0 { N::one() } else { N::zero() }));
    }

    fn targets(&self, x: &State, next: &State) -> (SmallVec<[u32; 8]>, bool) {
        let mut any = false;
        let t = self
            .settings
            .heads
            .iter()
            .zip(x.components().iter().zip(next.components()))
            .map(|(h, (&xi, &ni))| {
                let (c, clamped) = h.target(xi, ni);
                any |= clamped;
                c
            })
            .collect();
        (t, any)
    }

    fn train(&mut self) -> Result<(), ModelError> {
        let idx = self.replay.sample_indices(&mut self.rng, self.settings.batch_size)?;
        let width = self.net.spec().input;
        let mut xs = Vec::with_capacity(idx.len() * width);
        let mut ts = Vec::with_capacity(idx.len() * self.settings.heads.len());
        for i in idx {
            let (x, t) = self.replay.get(i);
            xs.extend_from_slice(x);
            ts.extend_from_slice(t);
        }
        let loss = self.trainer.train_batch(&mut self.net, &xs, &ts)?;
        self.last_loss = Some(loss.to_f64_lossy());
        Ok(())
    }
}

impl<T: Scalar, N: NetScalar> LambdaSource<T> for NeuralModel<N> {
    fn observe(&mut self, x: &State, a: Action, next: &State) -> Result<(), ModelError> {
        self.check(x)?;
        self.check(next)?;
        let mut input = Vec::new();
        self.encode_into(x, a, &mut input);
        let (t, clamped) = self.targets(x, next);
        if clamped {
            self.clamped.fetch_add(1, Ordering::Relaxed);
        }
        self.replay.push((input.into_boxed_slice(), t));
        self.observed += 1;
        if self.observed % self.settings.train_every as u64 == 0 {
            self.train()?;
        }
        Ok(())
    }

    fn predict(&self, x: &State, a: Action, next: &State) -> Result<FactoredModelOutput<T>, ModelError> {
        self.check(x)?;
        self.check(next)?;
        let (t, clamped) = self.targets(x, next);
        if clamped {
            self.clamped.fetch_add(1, Ordering::Relaxed);
        }
        let mut scratch = self.scratch.borrow_mut();
        let (input, ws) = &mut *scratch;
        self.encode_into(x, a, input);
        let probs = self.net.target_probs(input, &t, ws)?;
        let floor = self.settings.min_prob;
        let comps = probs.iter().map(|p| T::lit(p.to_f64_lossy().clamp(floor, 1.0))).collect();
        Ok(FactoredModelOutput::independent(comps))
    }
}
