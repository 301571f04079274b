use nalgebra::{DMatrix, DVector};

use crate::envs::{GaussianLinearPolicy, LinearGaussianEnv, QuadraticValue};
use crate::error::Result;

/// An action-value function `Q(s, a)` used to score truncated rollouts.
pub trait Critic: Send + Sync {
    fn q_value(&self, state: &[f64], action: &[f64]) -> f64;
}

/// `Q ≡ 0`: planning then only sees the model's `H`-step rewards.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroCritic;

impl Critic for ZeroCritic {
    fn q_value(&self, _: &[f64], _: &[f64]) -> f64 {
        0.0
    }
}

/// Exact discounted action value of a linear-Gaussian policy on a
/// linear-quadratic instance.
#[derive(Debug, Clone)]
pub struct LqCritic {
    env: LinearGaussianEnv,
    value: QuadraticValue,
    gamma: f64,
    noise_term: f64,
}

impl LqCritic {
    pub fn new(env: &LinearGaussianEnv, policy: &GaussianLinearPolicy, gamma: f64) -> Result<Self> {
        let value = env.discounted_value(policy, gamma)?;
        let noise_term = (&value.p_mat * env.noise_cov()).trace();
        Ok(LqCritic { env: env.clone(), value, gamma, noise_term })
    }

    /// `V(s) = −(sᵀPs + 2pᵀs + c)` of the evaluated policy.
    pub fn state_value(&self, state: &[f64]) -> f64 {
        let s = DVector::from_column_slice(state);
        -((s.transpose() * &self.value.p_mat * &s)[(0, 0)] + 2.0 * self.value.p_vec.dot(&s) + self.value.c)
    }

    pub fn quadratic(&self) -> (&DMatrix<f64>, &DVector<f64>, f64) {
        (&self.value.p_mat, &self.value.p_vec, self.value.c)
    }
}

impl Critic for LqCritic {
    /// `r(s, a) + γ E[V(s') | s, a]`.
    fn q_value(&self, state: &[f64], action: &[f64]) -> f64 {
        let x = DVector::from_vec(self.env.mean_next(state, action));
        let future = (x.transpose() * &self.value.p_mat * &x)[(0, 0)]
            + self.noise_term
            + 2.0 * self.value.p_vec.dot(&x)
            + self.value.c;
        self.env.mean_reward(state, action) - self.gamma * future
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{true_policy_value_mc, Environment, Policy};
    use crate::rng;

    #[test]
    fn q_averaged_over_policy_is_state_value() {
        let env = LinearGaussianEnv::random_stable(2, 1, 300, 4).unwrap();
        let pol = GaussianLinearPolicy::new(
            DMatrix::zeros(1, 2),
            DVector::from_element(1, 0.1),
            DVector::from_element(1, 0.4),
        )
        .unwrap();
        let critic = LqCritic::new(&env, &pol, 0.9).unwrap();
        let s = [0.7, -0.4];
        let mut r = rng::root(2);
        let k = 200_000;
        let avg = (0..k).map(|_| critic.q_value(&s, &pol.sample(&s, &mut r))).sum::<f64>() / k as f64;
        assert!((avg - critic.state_value(&s)).abs() < 2e-3 * critic.state_value(&s).abs(), "{avg}");
    }

    #[test]
    fn state_value_matches_simulation() {
        let base = LinearGaussianEnv::random_stable(2, 1, 150, 8).unwrap();
        let s0 = DVector::from_vec(vec![0.5, 0.5]);
        let env = LinearGaussianEnv::new(
            base.a().clone(),
            base.b().clone(),
            base.noise_cov().clone(),
            base.q().clone(),
            base.r().clone(),
            s0.clone(),
            DMatrix::zeros(2, 2),
            150,
        )
        .unwrap();
        let pol = GaussianLinearPolicy::new(DMatrix::zeros(1, 2), DVector::zeros(1), DVector::from_element(1, 0.2)).unwrap();
        let critic = LqCritic::new(&env, &pol, 0.9).unwrap();
        let mc = true_policy_value_mc(&env, &pol, 0.9, env.horizon(), 4000, 6).unwrap();
        assert!((mc.value - critic.state_value(s0.as_slice())).abs() < 3.0 * mc.stderr + 1e-6);
    }
}
