use super::Environment;
use crate::rng::{self, Stream};

/// Torque-driven damped pendulum, state `(θ, ω)` with `θ = 0` upright-down
/// equilibrium. Nonlinear, so values come from Monte-Carlo only.
#[derive(Debug, Clone, PartialEq)]
pub struct PendulumEnv {
    pub dt: f64,
    pub gravity: f64,
    pub length: f64,
    pub damping: f64,
    pub max_torque: f64,
    pub noise_std: f64,
    pub init_std: f64,
    pub horizon: usize,
}

impl Default for PendulumEnv {
    fn default() -> Self {
        PendulumEnv {
            dt: 0.05,
            gravity: 9.81,
            length: 1.0,
            damping: 0.1,
            max_torque: 2.0,
            noise_std: 0.01,
            init_std: 0.5,
            horizon: 200,
        }
    }
}

impl Environment for PendulumEnv {
    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&self, rng: &mut Stream) -> Vec<f64> {
        vec![self.init_std * rng::standard_normal(rng), self.init_std * rng::standard_normal(rng)]
    }

    fn step(&self, s: &[f64], a: &[f64], rng: &mut Stream) -> (Vec<f64>, f64) {
        let (theta, omega) = (s[0], s[1]);
        let u = a[0].clamp(-self.max_torque, self.max_torque);
        let reward = -(theta * theta + 0.1 * omega * omega + 0.001 * u * u);
        let alpha = -self.gravity / self.length * theta.sin() - self.damping * omega + u;
        let omega_next = omega + self.dt * alpha + self.noise_std * rng::standard_normal(rng);
        let theta_next = theta + self.dt * omega_next + self.noise_std * rng::standard_normal(rng);
        (vec![theta_next, omega_next], reward)
    }
}
