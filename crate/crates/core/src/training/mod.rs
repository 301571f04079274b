//! Maximum-likelihood training, validation-based selection and sweeps.

mod split;
mod sweep;
mod trainer;

use serde::{Deserialize, Serialize};

pub use split::{split_dataset, split_indices};
pub use sweep::{hyperparameter_sweep, SweepGrid, SweepOutcome, SweepResult, SweepRun, SweepSummary};
pub use trainer::{
    train_model, TrainConfig, TrainReport, Trainer, GRID_INPUT_NOISE, GRID_LAYERS, GRID_LEARNING_RATES,
    GRID_WEIGHT_DECAY, GRID_WIDTHS,
};

use crate::data::TransitionDataset;
use crate::dynamics::DynamicsModel;
use crate::error::{Error, Result};

/// Transitions per forward pass when scoring a dataset; bounds memory on
/// large validation splits.
const EVAL_CHUNK: usize = 2048;

/// Held-out likelihood, in nats per transition and raw units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NllEvaluation {
    /// One entry per target dimension: next-state dims, then reward.
    pub per_dim: Vec<f64>,
    /// Sum of `per_dim`.
    pub total: f64,
}

pub fn evaluate_nll(model: &DynamicsModel, dataset: &TransitionDataset) -> Result<NllEvaluation> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("cannot evaluate NLL on an empty dataset".into()));
    }
    let mut per_dim = vec![0.0; model.state_dim() + 1];
    let mut start = 0;
    while start < dataset.len() {
        let end = (start + EVAL_CHUNK).min(dataset.len());
        let idx: Vec<usize> = (start..end).collect();
        let chunk = if start == 0 && end == dataset.len() {
            model.nll_per_dim(dataset)?
        } else {
            model.nll_per_dim(&dataset.subset(&idx))?
        };
        let w = (end - start) as f64 / dataset.len() as f64;
        for (acc, v) in per_dim.iter_mut().zip(chunk) {
            *acc += w * v;
        }
        start = end;
    }
    let total = per_dim.iter().sum();
    Ok(NllEvaluation { per_dim, total })
}
