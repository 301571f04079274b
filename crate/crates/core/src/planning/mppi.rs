use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::critic::Critic;
use crate::dynamics::TransitionModel;
use crate::envs::{Environment, Policy, ValueEstimate};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MppiConfig {
    /// Refinement iterations.
    pub iterations: usize,
    /// Candidate rollouts per iteration.
    pub candidates: usize,
    /// Model steps before the critic takes over.
    pub horizon: usize,
    /// Softmax temperature.
    pub beta: f64,
    /// Variance of each mixture component around a candidate action.
    pub sigma_sq: f64,
    pub gamma: f64,
}

impl Default for MppiConfig {
    fn default() -> Self {
        MppiConfig { iterations: 3, candidates: 16, horizon: 10, beta: 0.1, sigma_sq: 0.01, gamma: 0.995 }
    }
}

impl MppiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.candidates == 0 {
            return Err(Error::Config("MPPI needs at least one iteration and one candidate".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("MPPI temperature {} must be positive", self.beta)));
        }
        if !(self.sigma_sq >= 0.0 && self.sigma_sq.is_finite()) {
            return Err(Error::Config(format!("MPPI variance {} must be >= 0", self.sigma_sq)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("MPPI gamma {} must lie in [0, 1]", self.gamma)));
        }
        Ok(())
    }
}

/// `softmax(R / β)` with non-finite returns given weight 0.
pub fn softmax_weights(returns: &[f64], beta: f64) -> Result<Vec<f64>> {
    let max = returns.iter().cloned().filter(|r| r.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::PlanningFailure(format!("all {} candidate returns are non-finite", returns.len())));
    }
    let raw: Vec<f64> =
        returns.iter().map(|r| if r.is_finite() { ((r - max) / beta).exp() } else { 0.0 }).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

fn sample_index(weights: &[f64], rng: &mut Stream) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            acc += w;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Everything the planner saw in its last refinement iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub action: Vec<f64>,
    /// Candidate returns of the last iteration (non-finite if excluded).
    pub returns: Vec<f64>,
    pub weights: Vec<f64>,
    /// `actions[τ]` holds every candidate's action at step `τ` (N × m),
    /// for `τ = 0..=H`.
    pub actions: Vec<Matrix>,
    pub chosen: usize,
}

/// Alg. 2 from state `s`: [`PlanOutcome::action`] only.
pub fn mppi_plan(
    s: &[f64],
    policy: &dyn Policy,
    model: &dyn TransitionModel,
    critic: &dyn Critic,
    config: &MppiConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    Ok(mppi_plan_detailed(s, policy, model, critic, config, seed)?.action)
}

/// Truncated MPPI. The first iteration samples actions from the policy
/// along each model rollout; later iterations sample the action at step
/// `τ` from the open-loop mixture `Σ_n w_n N(a_n^τ, σ² I)` built from the
/// previous iteration's candidates and softmax weights. A rollout's score is
/// `Σ_{τ<H} γ^τ r_{τ+1} + γ^H Q(s_H, a_H)`. The returned action is a first
/// action drawn from the last iteration's weights.
pub fn mppi_plan_detailed(
    s: &[f64],
    policy: &dyn Policy,
    model: &dyn TransitionModel,
    critic: &dyn Critic,
    config: &MppiConfig,
    seed: u64,
) -> Result<PlanOutcome> {
    config.validate()?;
    let (n, m) = (model.state_dim(), model.action_dim());
    if s.len() != n || policy.state_dim() != n || policy.action_dim() != m {
        return Err(Error::InputShape(format!(
            "state has {} entries, policy is {}->{}, model is {n}->{m}",
            s.len(),
            policy.state_dim(),
            policy.action_dim()
        )));
    }
    let (big_n, h) = (config.candidates, config.horizon);
    let sigma = config.sigma_sq.sqrt();
    let mut proposal: Option<(Vec<Matrix>, Vec<f64>)> = None;
    let mut last = None;

    for it in 0..config.iterations {
        let mut streams: Vec<Stream> =
            (0..big_n).map(|c| rng::stream(seed, (it * big_n + c) as u64)).collect();
        let mut states = Matrix::from_vec(big_n, n, s.repeat(big_n));
        let mut actions: Vec<Matrix> = Vec::with_capacity(h + 1);
        let mut returns = vec![0.0; big_n];
        let mut discount = 1.0;
        for tau in 0..=h {
            let mut a_t = Matrix::zeros(big_n, m);
            for c in 0..big_n {
                let a = match &proposal {
                    None => policy.sample(states.row(c), &mut streams[c]),
                    Some((prev, w)) => {
                        let j = sample_index(w, &mut streams[c]);
                        let centre = prev[tau].row(j);
                        if sigma > 0.0 {
                            centre.iter().map(|x| x + sigma * rng::standard_normal(&mut streams[c])).collect()
                        } else {
                            centre.to_vec()
                        }
                    }
                };
                a_t.row_mut(c).copy_from_slice(&a);
            }
            if tau == h {
                for (c, ret) in returns.iter_mut().enumerate() {
                    *ret += discount * critic.q_value(states.row(c), a_t.row(c));
                }
                actions.push(a_t);
                break;
            }
            let (next, rewards) = model.sample_batch(&states, &a_t, &mut streams)?;
            for (c, ret) in returns.iter_mut().enumerate() {
                *ret += discount * rewards[c];
                if next.row(c).iter().any(|v| !v.is_finite()) {
                    *ret = f64::NAN;
                }
            }
            actions.push(a_t);
            states = next;
            discount *= config.gamma;
        }
        let weights = softmax_weights(&returns, config.beta)?;
        last = Some((returns, weights.clone(), actions.clone()));
        proposal = Some((actions, weights));
    }

    let (returns, weights, actions) = last.expect("at least one iteration");
    let mut pick = rng::stream(seed, (config.iterations * big_n) as u64);
    let chosen = sample_index(&weights, &mut pick);
    Ok(PlanOutcome { action: actions[0].row(chosen).to_vec(), returns, weights, actions, chosen })
}

/// Paired returns of the raw policy and the planner on the true
/// environment.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerEvaluation {
    pub planned: ValueEstimate,
    pub raw: ValueEstimate,
    /// Planned minus raw, per episode.
    pub difference: ValueEstimate,
    pub planned_returns: Vec<f64>,
    pub raw_returns: Vec<f64>,
}

impl PlannerEvaluation {
    /// Paired z-score of the improvement; 0 when the two arms coincide.
    pub fn z_score(&self) -> f64 {
        if self.difference.stderr == 0.0 {
            if self.difference.value == 0.0 {
                0.0
            } else {
                self.difference.value.signum() * f64::INFINITY
            }
        } else {
            self.difference.value / self.difference.stderr
        }
    }
}

/// Runs `n_episodes` pairs of episodes of `episode_len` steps. Both arms
/// of episode `e` share the environment stream (start state and transition
/// noise); the raw arm draws actions from its own stream and the planner
/// from per-step derived seeds.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_planner(
    env: &dyn Environment,
    policy: &dyn Policy,
    model: &dyn TransitionModel,
    critic: &dyn Critic,
    config: &MppiConfig,
    n_episodes: usize,
    episode_len: usize,
    seed: u64,
) -> Result<PlannerEvaluation> {
    if n_episodes < 2 {
        return Err(Error::Config(format!("need at least 2 episodes, got {n_episodes}")));
    }
    config.validate()?;
    let env_seed = rng::derive_seed(seed, 1);
    let raw_seed = rng::derive_seed(seed, 2);
    let plan_seed = rng::derive_seed(seed, 3);
    let gamma = config.gamma;

    let pairs: Vec<(f64, f64)> = (0..n_episodes as u64)
        .into_par_iter()
        .map(|e| -> Result<(f64, f64)> {
            let mut env_rng = rng::stream(env_seed, e);
            let mut s = env.reset(&mut env_rng);
            let mut act_rng = rng::stream(raw_seed, e);
            let mut raw = 0.0;
            let mut discount = 1.0;
            let s0 = s.clone();
            for _ in 0..episode_len {
                let a = policy.sample(&s, &mut act_rng);
                let (next, r) = env.step(&s, &a, &mut env_rng);
                raw += discount * r;
                discount *= gamma;
                s = next;
            }

            let mut env_rng = rng::stream(env_seed, e);
            let _ = env.reset(&mut env_rng);
            let mut s = s0;
            let mut planned = 0.0;
            let mut discount = 1.0;
            let episode_seed = rng::derive_seed(plan_seed, e);
            for t in 0..episode_len {
                let a = mppi_plan(&s, policy, model, critic, config, rng::derive_seed(episode_seed, t as u64))?;
                let (next, r) = env.step(&s, &a, &mut env_rng);
                planned += discount * r;
                discount *= gamma;
                s = next;
            }
            Ok((planned, raw))
        })
        .collect::<Result<_>>()?;
    let planned_returns: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let raw_returns: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let diffs: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    Ok(PlannerEvaluation {
        planned: ValueEstimate::from_returns(&planned_returns),
        raw: ValueEstimate::from_returns(&raw_returns),
        difference: ValueEstimate::from_returns(&diffs),
        planned_returns,
        raw_returns,
    })
}
