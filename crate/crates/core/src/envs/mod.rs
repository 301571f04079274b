//! Synthetic environments with known ground truth, linear-Gaussian
//! policies, data collection and policy-value oracles.

mod linear;
mod pendulum;
mod policy;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

pub use linear::{spectral_radius, CorrelatedChainEnv, LinearGaussianEnv, QuadraticValue};
pub use pendulum::PendulumEnv;
pub use policy::{GaussianLinearPolicy, Policy, PolicySet};

use crate::data::TransitionDataset;
use crate::dynamics::TransitionModel;
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng::{self, Stream};

/// A finite-horizon MDP. `step` must be a pure function of its arguments
/// and the draws it takes from `rng`.
pub trait Environment: Send + Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn reset(&self, rng: &mut Stream) -> Vec<f64>;
    /// Returns `(s', r')`; the reward is the one paired with `s'`.
    fn step(&self, state: &[f64], action: &[f64], rng: &mut Stream) -> (Vec<f64>, f64);
}

/// The true environment dynamics seen through the model interface: the
/// "perfect model".
pub struct TrueDynamics<'a>(pub &'a dyn Environment);

impl TransitionModel for TrueDynamics<'_> {
    fn state_dim(&self) -> usize {
        self.0.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.0.action_dim()
    }

    fn sample_batch(&self, states: &Matrix, actions: &Matrix, streams: &mut [Stream]) -> Result<(Matrix, Vec<f64>)> {
        let n = self.0.state_dim();
        if states.cols() != n || actions.cols() != self.0.action_dim() || actions.rows() != states.rows() {
            return Err(Error::InputShape("state/action batch does not match the environment".into()));
        }
        if streams.len() != states.rows() {
            return Err(Error::InputShape(format!("{} streams for {} rows", streams.len(), states.rows())));
        }
        let mut next = Matrix::zeros(states.rows(), n);
        let mut rewards = Vec::with_capacity(states.rows());
        for (i, rng) in streams.iter_mut().enumerate() {
            let (s, r) = self.0.step(states.row(i), actions.row(i), rng);
            next.row_mut(i).copy_from_slice(&s);
            rewards.push(r);
        }
        Ok((next, rewards))
    }
}

/// Rolls `policy` in `env` for `num_transitions` steps, resetting at the
/// horizon. Returns the transitions and every reset state (one row each).
pub fn collect_dataset(
    env: &dyn Environment,
    policy: &dyn Policy,
    num_transitions: usize,
    seed: u64,
) -> Result<(TransitionDataset, Matrix)> {
    if num_transitions == 0 {
        return Err(Error::EmptyInput("cannot collect zero transitions".into()));
    }
    check_dims(env, policy)?;
    if env.horizon() == 0 {
        return Err(Error::Config("environment horizon must be positive to collect data".into()));
    }
    let n = env.state_dim();
    let mut rng = rng::root(seed);
    let mut data = TransitionDataset::with_capacity(n, env.action_dim(), num_transitions);
    let mut starts = Vec::new();
    let mut s = Vec::new();
    for i in 0..num_transitions {
        if i % env.horizon() == 0 {
            s = env.reset(&mut rng);
            starts.extend_from_slice(&s);
        }
        let a = policy.sample(&s, &mut rng);
        let (next, r) = env.step(&s, &a, &mut rng);
        data.push(&s, &a, r, &next)?;
        s = next;
    }
    let rows = starts.len() / n;
    Ok((data, Matrix::from_vec(rows, n, starts)))
}

fn check_dims(env: &dyn Environment, policy: &dyn Policy) -> Result<()> {
    if env.state_dim() != policy.state_dim() || env.action_dim() != policy.action_dim() {
        return Err(Error::InputShape(format!(
            "policy is {}->{}, environment is {}->{}",
            policy.state_dim(),
            policy.action_dim(),
            env.state_dim(),
            env.action_dim()
        )));
    }
    Ok(())
}

/// Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueEstimate {
    pub value: f64,
    pub stderr: f64,
    pub rollouts: usize,
}

impl ValueEstimate {
    /// Mean and `sample std / √k` of a set of returns.
    pub fn from_returns(returns: &[f64]) -> Self {
        let k = returns.len();
        let mean = returns.iter().sum::<f64>() / k as f64;
        let stderr = if k > 1 {
            let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
            (var / k as f64).sqrt()
        } else {
            0.0
        };
        ValueEstimate { value: mean, stderr, rollouts: k }
    }
}

/// Discounted return of one true-environment episode.
pub fn episode_return(env: &dyn Environment, policy: &dyn Policy, gamma: f64, horizon: usize, rng: &mut Stream) -> f64 {
    let mut s = env.reset(rng);
    let mut total = 0.0;
    let mut discount = 1.0;
    for _ in 0..horizon {
        let a = policy.sample(&s, rng);
        let (next, r) = env.step(&s, &a, rng);
        total += discount * r;
        discount *= gamma;
        s = next;
    }
    total
}

/// Ground-truth policy value by simulation in the true environment.
/// Rollout `i` draws only from stream `i` of `seed`.
pub fn true_policy_value_mc(
    env: &dyn Environment,
    policy: &dyn Policy,
    gamma: f64,
    horizon: usize,
    n_rollouts: usize,
    seed: u64,
) -> Result<ValueEstimate> {
    if n_rollouts < 2 {
        return Err(Error::Config(format!("need at least 2 rollouts, got {n_rollouts}")));
    }
    check_dims(env, policy)?;
    let returns: Vec<f64> = (0..n_rollouts as u64)
        .into_par_iter()
        .map(|i| episode_return(env, policy, gamma, horizon, &mut rng::stream(seed, i)))
        .collect();
    Ok(ValueEstimate::from_returns(&returns))
}

/// Discount used to order and de-duplicate generated policies.
const POLICY_SET_GAMMA: f64 = 0.995;
/// Generated closed loops are kept at least this far inside the unit circle.
const MAX_CLOSED_LOOP_RADIUS: f64 = 0.97;

/// `count` linear-Gaussian policies from the regulator towards random
/// gains: policy `i` uses `K_i = (1 − α_i) K* + α_i G_i` with
/// `α_i = quality_spread · i / (count − 1)`, plus a random action-noise
/// level. Regenerates any policy whose oracle value ties an earlier one.
pub fn make_policy_set(env: &LinearGaussianEnv, count: usize, quality_spread: f64, seed: u64) -> Result<PolicySet> {
    if count < 2 {
        return Err(Error::Config(format!("a policy set needs at least 2 policies, got {count}")));
    }
    if !(0.0..=1.0).contains(&quality_spread) {
        return Err(Error::Config(format!("quality spread {quality_spread} must lie in [0, 1]")));
    }
    let (n, m) = (env.state_dim(), env.action_dim());
    let k_star = env.lqr_gain(POLICY_SET_GAMMA)?;
    let mut rng = rng::root(seed);
    let mut policies: Vec<GaussianLinearPolicy> = Vec::with_capacity(count);
    let mut values: Vec<f64> = Vec::with_capacity(count);
    let mut mix = Vec::with_capacity(count);
    for i in 0..count {
        let alpha = quality_spread * i as f64 / (count - 1) as f64;
        let mut scale = 1.0;
        let mut attempts = 0;
        let policy = loop {
            attempts += 1;
            if attempts > 1000 {
                return Err(Error::Config("could not generate distinct stable policies".into()));
            }
            let g = DMatrix::from_fn(m, n, |_, _| scale * rng::standard_normal(&mut rng));
            let gain = &k_star * (1.0 - alpha) + g * alpha;
            let noise = DVector::from_fn(m, |_, _| 0.05 + 0.45 * rng::standard_normal(&mut rng).abs().min(1.0));
            let candidate = GaussianLinearPolicy::new(gain, DVector::zeros(m), noise)?;
            if spectral_radius(&env.closed_loop(&candidate)?) >= MAX_CLOSED_LOOP_RADIUS {
                scale *= 0.9;
                continue;
            }
            let v = env.analytic_value(&candidate, POLICY_SET_GAMMA, env.horizon())?;
            if values.iter().any(|u| (u - v).abs() <= 1e-6 * (1.0 + v.abs())) {
                continue;
            }
            values.push(v);
            break candidate;
        };
        policies.push(policy);
        mix.push(alpha);
    }
    Ok(PolicySet {
        names: (0..count).map(|i| format!("policy_{i:02}")).collect(),
        policies,
        mix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct UnitReward;

    impl Environment for UnitReward {
        fn state_dim(&self) -> usize {
            1
        }
        fn action_dim(&self) -> usize {
            1
        }
        fn horizon(&self) -> usize {
            3
        }
        fn reset(&self, _: &mut Stream) -> Vec<f64> {
            vec![0.0]
        }
        fn step(&self, s: &[f64], _: &[f64], _: &mut Stream) -> (Vec<f64>, f64) {
            (s.to_vec(), 1.0)
        }
    }

    fn still() -> GaussianLinearPolicy {
        GaussianLinearPolicy::new(DMatrix::zeros(1, 1), DVector::zeros(1), DVector::zeros(1)).unwrap()
    }

    #[test]
    fn geometric_sum_value() {
        let v = true_policy_value_mc(&UnitReward, &still(), 0.5, 3, 10, 0).unwrap();
        assert_eq!(v.value, 1.75);
        assert_eq!(v.stderr, 0.0);
    }

    #[test]
    fn myopic_value_is_first_reward() {
        let env = LinearGaussianEnv::random_stable(2, 1, 20, 3).unwrap();
        let p = GaussianLinearPolicy::new(DMatrix::zeros(1, 2), DVector::zeros(1), DVector::from_element(1, 0.2)).unwrap();
        let exact = env.analytic_value(&p, 0.0, 20).unwrap();
        // E[r₁] = −(tr(Q Σ₀) + R σ²) = −(2 + 0.1 · 0.04)
        assert!((exact + 2.004).abs() < 1e-12);
        let mc = true_policy_value_mc(&env, &p, 0.0, 20, 20_000, 1).unwrap();
        assert!((mc.value - exact).abs() < 3.0 * mc.stderr);
    }

    #[test]
    fn horizon_one_collection() {
        let env = LinearGaussianEnv::random_stable(2, 1, 1, 4).unwrap();
        let p = GaussianLinearPolicy::new(DMatrix::zeros(1, 2), DVector::zeros(1), DVector::from_element(1, 1.0)).unwrap();
        let (data, starts) = collect_dataset(&env, &p, 5, 7).unwrap();
        assert_eq!((data.len(), starts.rows()), (5, 5));
        for i in 0..5 {
            assert_eq!(data.state(i), starts.row(i));
        }
        assert_eq!(collect_dataset(&env, &p, 5, 7).unwrap().0, data);
    }

    #[test]
    fn episodes_chain_and_reset_at_horizon() {
        let env = LinearGaussianEnv::random_stable(2, 1, 4, 4).unwrap();
        let p = GaussianLinearPolicy::new(DMatrix::zeros(1, 2), DVector::zeros(1), DVector::from_element(1, 1.0)).unwrap();
        let (data, starts) = collect_dataset(&env, &p, 10, 1).unwrap();
        assert_eq!(starts.rows(), 3);
        assert_eq!(data.state(1), data.next_state(0));
        assert_eq!(data.state(4), starts.row(1));
    }

    #[test]
    fn residual_covariance_matches_identity_noise() {
        let base = LinearGaussianEnv::random_stable(3, 1, 50, 8).unwrap();
        let env = LinearGaussianEnv::new(
            base.a().clone(),
            base.b().clone(),
            DMatrix::identity(3, 3),
            base.q().clone(),
            base.r().clone(),
            DVector::zeros(3),
            DMatrix::identity(3, 3),
            50,
        )
        .unwrap();
        let p = GaussianLinearPolicy::new(DMatrix::zeros(1, 3), DVector::zeros(1), DVector::from_element(1, 1.0)).unwrap();
        let (data, _) = collect_dataset(&env, &p, 10_000, 2).unwrap();
        let mut cov = DMatrix::<f64>::zeros(3, 3);
        for t in data.iter() {
            let mean = env.mean_next(t.state, t.action);
            let e = DVector::from_iterator(3, t.next_state.iter().zip(&mean).map(|(x, m)| x - m));
            cov += &e * e.transpose();
        }
        cov /= data.len() as f64;
        assert!((cov - DMatrix::identity(3, 3)).norm() < 0.1);
    }

    #[test]
    fn analytic_and_monte_carlo_agree_on_random_instances() {
        for seed in 0..50 {
            let n = 1 + (seed as usize % 3);
            let env = LinearGaussianEnv::random_stable(n, 1, 10, 100 + seed).unwrap();
            let mut r = rng::root(seed);
            let p = GaussianLinearPolicy::new(
                DMatrix::from_fn(1, n, |_, _| 0.1 * rng::standard_normal(&mut r)),
                DVector::from_element(1, 0.1),
                DVector::from_element(1, 0.3),
            )
            .unwrap();
            let exact = env.analytic_value(&p, 0.95, 10).unwrap();
            let mc = true_policy_value_mc(&env, &p, 0.95, 10, 4000, seed).unwrap();
            assert!((mc.value - exact).abs() < 3.0 * mc.stderr, "seed {seed}: {} vs {exact} ± {}", mc.value, mc.stderr);
        }
    }

    #[test]
    fn policy_sets() {
        let env = LinearGaussianEnv::default_instance();
        let two = make_policy_set(&env, 2, 0.5, 1).unwrap();
        assert_eq!(two.len(), 2);

        let flat = make_policy_set(&env, 4, 0.0, 2).unwrap();
        assert!(flat.policies.iter().all(|p| p.gain == flat.policies[0].gain));

        let set = make_policy_set(&env, 10, 1.0, 3).unwrap();
        let values: Vec<f64> = set.policies.iter().map(|p| env.analytic_value(p, 0.995, env.horizon()).unwrap()).collect();
        let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let worst = values.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(best - worst >= 0.2 * best.abs(), "{values:?}");
        assert!(make_policy_set(&env, 1, 0.5, 0).is_err());
    }
}
