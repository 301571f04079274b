//! Model-based off-policy evaluation, ensembles, and ranking metrics.

mod metrics;
mod study;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{
    absolute_error, bootstrap_metric, metrics_report, pearson_r, regret_at_k, spearman_rho, BootstrapSummary,
    MetricValue, MetricsReport,
};
pub use study::{nll_vs_ope_study, StudyCell, StudyModel, StudyResult, StudyRow};

use crate::dynamics::TransitionModel;
use crate::envs::Policy;
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng::{self, Stream};

/// Rollouts advanced together through one batched model call.
const ROLLOUT_BLOCK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpeReport {
    pub estimate: f64,
    /// Sample std of the per-rollout returns over `√n_rollouts`.
    pub stderr: f64,
    /// Completed rollouts (diverged ones excluded).
    pub n_rollouts: usize,
    pub diverged: usize,
    pub gamma: f64,
    pub horizon: usize,
}

/// Per-rollout discounted returns; `None` marks a rollout that produced a
/// non-finite state or reward, with the step index recorded separately.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutReturns {
    pub returns: Vec<Option<f64>>,
    pub first_divergence_step: Option<usize>,
}

/// Alg. 1: Monte-Carlo return of `policy` under `model`, starting from
/// states drawn uniformly (with replacement) from `initial_states`.
/// Rollout `i` consumes only stream `i` of `seed`, so results do not
/// depend on the thread count.
pub fn mb_ope(
    model: &dyn TransitionModel,
    policy: &dyn Policy,
    initial_states: &Matrix,
    n_rollouts: usize,
    gamma: f64,
    horizon: usize,
    seed: u64,
) -> Result<OpeReport> {
    ensemble_mb_ope(&[model], policy, initial_states, n_rollouts, gamma, horizon, seed)
}

/// As [`mb_ope`], but every transition is drawn from an ensemble member
/// chosen uniformly at random for that step.
pub fn ensemble_mb_ope(
    models: &[&dyn TransitionModel],
    policy: &dyn Policy,
    initial_states: &Matrix,
    n_rollouts: usize,
    gamma: f64,
    horizon: usize,
    seed: u64,
) -> Result<OpeReport> {
    let rollouts = rollout_returns(models, policy, initial_states, n_rollouts, gamma, horizon, seed)?;
    let finished: Vec<f64> = rollouts.returns.iter().flatten().copied().collect();
    let diverged = n_rollouts - finished.len();
    if finished.is_empty() {
        return Err(Error::RolloutDivergence(format!(
            "all {n_rollouts} rollouts diverged (first at step {})",
            rollouts.first_divergence_step.unwrap_or(0)
        )));
    }
    let est = crate::envs::ValueEstimate::from_returns(&finished);
    Ok(OpeReport {
        estimate: est.value,
        stderr: est.stderr,
        n_rollouts: finished.len(),
        diverged,
        gamma,
        horizon,
    })
}

pub fn rollout_returns(
    models: &[&dyn TransitionModel],
    policy: &dyn Policy,
    initial_states: &Matrix,
    n_rollouts: usize,
    gamma: f64,
    horizon: usize,
    seed: u64,
) -> Result<RolloutReturns> {
    let first = models.first().ok_or_else(|| Error::EmptyInput("no dynamics model given".into()))?;
    let (n, m) = (first.state_dim(), first.action_dim());
    if models.iter().any(|md| md.state_dim() != n || md.action_dim() != m) {
        return Err(Error::InputShape("ensemble members have different dimensions".into()));
    }
    if policy.state_dim() != n || policy.action_dim() != m {
        return Err(Error::InputShape(format!(
            "policy is {}->{}, model is {n}->{m}",
            policy.state_dim(),
            policy.action_dim()
        )));
    }
    if initial_states.rows() == 0 {
        return Err(Error::EmptyInput("initial-state set is empty".into()));
    }
    if initial_states.cols() != n {
        return Err(Error::InputShape(format!(
            "initial states have {} columns, model expects {n}",
            initial_states.cols()
        )));
    }
    if n_rollouts < 2 {
        return Err(Error::Config(format!("need at least 2 rollouts, got {n_rollouts}")));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Config(format!("gamma {gamma} must lie in [0, 1]")));
    }

    let blocks: Vec<(Vec<Option<f64>>, Option<usize>)> = (0..n_rollouts)
        .collect::<Vec<_>>()
        .par_chunks(ROLLOUT_BLOCK)
        .map(|ids| run_block(models, policy, initial_states, ids, gamma, horizon, seed))
        .collect::<Result<_>>()?;
    let mut returns = Vec::with_capacity(n_rollouts);
    let mut first_divergence_step = None;
    for (r, d) in blocks {
        returns.extend(r);
        first_divergence_step = match (first_divergence_step, d) {
            (Some(a), Some(b)) => Some(usize::min(a, b)),
            (a, b) => a.or(b),
        };
    }
    Ok(RolloutReturns { returns, first_divergence_step })
}

fn run_block(
    models: &[&dyn TransitionModel],
    policy: &dyn Policy,
    initial_states: &Matrix,
    ids: &[usize],
    gamma: f64,
    horizon: usize,
    seed: u64,
) -> Result<(Vec<Option<f64>>, Option<usize>)> {
    let n = initial_states.cols();
    let m = policy.action_dim();
    let mut streams: Vec<Stream> = ids.iter().map(|&i| rng::stream(seed, i as u64)).collect();
    let mut states: Vec<Vec<f64>> = streams
        .iter_mut()
        .map(|rng| initial_states.row(rng.random_range(0..initial_states.rows())).to_vec())
        .collect();
    let mut totals = vec![0.0; ids.len()];
    let mut alive: Vec<bool> = vec![true; ids.len()];
    let mut first_div = None;
    let mut discount = 1.0;

    for t in 0..horizon {
        let live: Vec<usize> = (0..ids.len()).filter(|&i| alive[i]).collect();
        if live.is_empty() {
            break;
        }
        let mut actions = vec![Vec::new(); ids.len()];
        let mut member = vec![0usize; ids.len()];
        for &i in &live {
            actions[i] = policy.sample(&states[i], &mut streams[i]);
            if models.len() > 1 {
                member[i] = streams[i].random_range(0..models.len());
            }
        }
        for (k, model) in models.iter().enumerate() {
            let rows: Vec<usize> = live.iter().copied().filter(|&i| member[i] == k).collect();
            if rows.is_empty() {
                continue;
            }
            let mut s_mat = Matrix::zeros(rows.len(), n);
            let mut a_mat = Matrix::zeros(rows.len(), m);
            for (r, &i) in rows.iter().enumerate() {
                s_mat.row_mut(r).copy_from_slice(&states[i]);
                a_mat.row_mut(r).copy_from_slice(&actions[i]);
            }
            let mut group: Vec<Stream> = rows.iter().map(|&i| streams[i].clone()).collect();
            let (next, rewards) = model.sample_batch(&s_mat, &a_mat, &mut group)?;
            for (r, &i) in rows.iter().enumerate() {
                streams[i] = group[r].clone();
                let s_next = next.row(r);
                if !rewards[r].is_finite() || s_next.iter().any(|v| !v.is_finite()) {
                    alive[i] = false;
                    first_div.get_or_insert(t);
                    continue;
                }
                totals[i] += discount * rewards[r];
                states[i].copy_from_slice(s_next);
            }
        }
        discount *= gamma;
    }
    let returns = totals.into_iter().zip(alive).map(|(v, ok)| ok.then_some(v)).collect();
    Ok((returns, first_div))
}
