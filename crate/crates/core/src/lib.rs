//! Feedforward and autoregressive probabilistic dynamics models, trained by
//! maximum likelihood and used for Monte-Carlo model-based off-policy
//! evaluation, truncated MPPI planning and dataset augmentation.
//!
//! Module map:
//!
//! - [`nn`]: dense MLP engine (forward/backward, Adam, SGD, LR decay)
//! - [`dynamics`]: the two model families, NLL, sampling, checkpoints
//! - [`training`]: splitting, minibatch training, hyperparameter sweeps
//! - [`envs`]: synthetic environments, policies, ground-truth value oracles
//! - [`ope`]: model-based OPE, ensembles, metrics with bootstrap
//! - [`planning`]: MPPI with critic truncation, planner evaluation, augmentation
//! - [`config`]: the `key = value` run configuration
//! - [`io`]: binary file formats and CSV/JSON-lines reports

pub mod config;
pub mod data;
pub mod dynamics;
pub mod envs;
pub mod error;
pub mod io;
pub mod nn;
pub mod ope;
pub mod planning;
pub mod rng;
pub mod training;

pub use data::{Transition, TransitionBatch, TransitionDataset};
pub use error::{Error, Result};
