//! Probabilistic dynamics models over the next state and reward.
//!
//! Two families share the Gaussian likelihood and the normalization
//! machinery: [`FeedforwardDynamics`] predicts all `n + 1` target dimensions
//! at once with a diagonal covariance; [`AutoregressiveDynamics`] factorizes
//! the joint by the chain rule and predicts one dimension per forward pass.
//! The reward is treated as target dimension `n` in both, with no weighting.

mod autoregressive;
mod checkpoint;
mod feedforward;
mod gaussian;
mod normalize;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use autoregressive::AutoregressiveDynamics;
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use feedforward::FeedforwardDynamics;
pub use gaussian::{
    clamp_log_variance, gaussian_entropy, gaussian_nll, nll_and_output_grad, GaussianPrediction, HALF_LN_2PI,
    LOG_VAR_MAX, LOG_VAR_MIN,
};
pub use normalize::{NormalizationStats, STD_FLOOR};

use crate::data::TransitionDataset;
use crate::error::{Error, Result};
use crate::nn::{Matrix, MlpSpec, ParameterSet};
use crate::rng::Stream;

/// Network inputs and normalized targets for a batch of transitions.
#[derive(Debug, Clone)]
pub struct Design {
    pub inputs: Matrix,
    /// One row per network row; `k` targets per row.
    pub targets: Matrix,
    /// Number of transitions the rows were expanded from.
    pub transitions: usize,
}

pub(crate) fn check_state(s: &[f64], n: usize) -> Result<()> {
    if s.len() != n {
        return Err(Error::InputShape(format!("state has {} entries, model expects {n}", s.len())));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericInput("state is not finite".into()));
    }
    Ok(())
}

pub(crate) fn check_action(a: &[f64], m: usize) -> Result<()> {
    if a.len() != m {
        return Err(Error::InputShape(format!("action has {} entries, model expects {m}", a.len())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericInput("action is not finite".into()));
    }
    Ok(())
}

/// Anything that can play the environment in a rollout: draws
/// `(s', r')` given `(s, a)`.
pub trait TransitionModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;

    /// One draw per row; row `i` consumes randomness only from `streams[i]`.
    fn sample_batch(&self, states: &Matrix, actions: &Matrix, streams: &mut [Stream]) -> Result<(Matrix, Vec<f64>)>;

    fn sample(&self, s: &[f64], a: &[f64], rng: &mut Stream) -> Result<(Vec<f64>, f64)> {
        let states = Matrix::from_vec(1, s.len(), s.to_vec());
        let actions = Matrix::from_vec(1, a.len(), a.to_vec());
        let (next, rewards) = self.sample_batch(&states, &actions, std::slice::from_mut(rng))?;
        Ok((next.into_vec(), rewards[0]))
    }
}

impl TransitionModel for FeedforwardDynamics {
    fn state_dim(&self) -> usize {
        FeedforwardDynamics::state_dim(self)
    }
    fn action_dim(&self) -> usize {
        FeedforwardDynamics::action_dim(self)
    }
    fn sample_batch(&self, states: &Matrix, actions: &Matrix, streams: &mut [Stream]) -> Result<(Matrix, Vec<f64>)> {
        FeedforwardDynamics::sample_batch(self, states, actions, streams)
    }
}

impl TransitionModel for AutoregressiveDynamics {
    fn state_dim(&self) -> usize {
        AutoregressiveDynamics::state_dim(self)
    }
    fn action_dim(&self) -> usize {
        AutoregressiveDynamics::action_dim(self)
    }
    fn sample_batch(&self, states: &Matrix, actions: &Matrix, streams: &mut [Stream]) -> Result<(Matrix, Vec<f64>)> {
        AutoregressiveDynamics::sample_batch(self, states, actions, streams)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Feedforward,
    Autoregressive,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Feedforward => "feedforward",
            ModelKind::Autoregressive => "autoregressive",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feedforward" | "ff" => Ok(ModelKind::Feedforward),
            "autoregressive" | "ar" => Ok(ModelKind::Autoregressive),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Either model family behind one type.
#[derive(Debug, Clone, PartialEq)]
pub enum DynamicsModel {
    Feedforward(FeedforwardDynamics),
    Autoregressive(AutoregressiveDynamics),
}

macro_rules! dispatch {
    ($self:expr, $m:ident => $body:expr) => {
        match $self {
            DynamicsModel::Feedforward($m) => $body,
            DynamicsModel::Autoregressive($m) => $body,
        }
    };
}

impl DynamicsModel {
    /// Freshly initialized model of `kind` with identity normalization.
    pub fn new(kind: ModelKind, state_dim: usize, action_dim: usize, hidden: Vec<usize>, seed: u64) -> Result<Self> {
        Ok(match kind {
            ModelKind::Feedforward => {
                DynamicsModel::Feedforward(FeedforwardDynamics::new(state_dim, action_dim, hidden, seed)?)
            }
            ModelKind::Autoregressive => {
                DynamicsModel::Autoregressive(AutoregressiveDynamics::new(state_dim, action_dim, hidden, seed)?)
            }
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            DynamicsModel::Feedforward(_) => ModelKind::Feedforward,
            DynamicsModel::Autoregressive(_) => ModelKind::Autoregressive,
        }
    }

    pub fn state_dim(&self) -> usize {
        dispatch!(self, m => m.state_dim())
    }

    pub fn action_dim(&self) -> usize {
        dispatch!(self, m => m.action_dim())
    }

    pub fn spec(&self) -> &MlpSpec {
        dispatch!(self, m => m.spec())
    }

    pub fn params(&self) -> &ParameterSet {
        dispatch!(self, m => m.params())
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        dispatch!(self, m => m.params_mut())
    }

    pub fn stats(&self) -> &NormalizationStats {
        dispatch!(self, m => m.stats())
    }

    pub fn set_stats(&mut self, stats: NormalizationStats) -> Result<()> {
        dispatch!(self, m => m.set_stats(stats))
    }

    pub fn design(&self, batch: &TransitionDataset, noise: Option<(f64, &mut Stream)>) -> Result<Design> {
        dispatch!(self, m => m.design(batch, noise))
    }

    /// Mean NLL per transition in raw units.
    pub fn nll(&self, batch: &TransitionDataset) -> Result<f64> {
        dispatch!(self, m => m.nll(batch))
    }

    /// Per-target-dimension mean NLL (length `n + 1`, reward last).
    pub fn nll_per_dim(&self, batch: &TransitionDataset) -> Result<Vec<f64>> {
        dispatch!(self, m => m.nll_per_dim(batch))
    }

    pub fn mean_entropy(&self, batch: &TransitionDataset) -> Result<f64> {
        dispatch!(self, m => m.mean_entropy(batch))
    }
}

impl TransitionModel for DynamicsModel {
    fn state_dim(&self) -> usize {
        DynamicsModel::state_dim(self)
    }
    fn action_dim(&self) -> usize {
        DynamicsModel::action_dim(self)
    }
    fn sample_batch(&self, states: &Matrix, actions: &Matrix, streams: &mut [Stream]) -> Result<(Matrix, Vec<f64>)> {
        dispatch!(self, m => m.sample_batch(states, actions, streams))
    }
}

impl From<FeedforwardDynamics> for DynamicsModel {
    fn from(m: FeedforwardDynamics) -> Self {
        DynamicsModel::Feedforward(m)
    }
}

impl From<AutoregressiveDynamics> for DynamicsModel {
    fn from(m: AutoregressiveDynamics) -> Self {
        DynamicsModel::Autoregressive(m)
    }
}
