use nalgebra::{DMatrix, DVector};

use super::policy::GaussianLinearPolicy;
use super::Environment;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Values beyond this magnitude are treated as a blown-up closed loop.
const OVERFLOW_LIMIT: f64 = 1e150;

/// `s' = A s + B a + w`, `w ~ N(0, Σ)`, reward `−(sᵀQs + aᵀRa)` paired with
/// `s'`, and `s₀ ~ N(μ₀, Σ₀)`.
///
/// `reward_noise_std` adds zero-mean Gaussian noise to the emitted reward.
/// It leaves every expected return unchanged and keeps reward likelihoods
/// finite for models that would otherwise fit a deterministic target.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianEnv {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    noise_cov: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    init_mean: DVector<f64>,
    init_cov: DMatrix<f64>,
    horizon: usize,
    reward_noise_std: f64,
    noise_chol: DMatrix<f64>,
    init_chol: DMatrix<f64>,
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if (m - m.transpose()).abs().max() > 1e-12 * m.abs().max().max(1.0) {
        return Err(Error::Config(format!("{what} is not symmetric")));
    }
    m.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::Config(format!("{what} is not positive definite")))
}

/// Cholesky factor that tolerates a zero matrix (deterministic start).
fn cholesky_psd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if m.iter().all(|v| *v == 0.0) {
        return Ok(m.clone());
    }
    cholesky(m, what)
}

fn check_shape(m: &DMatrix<f64>, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::InputShape(format!("{what} is {:?}, expected ({rows}, {cols})", m.shape())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericInput(format!("{what} has non-finite entries")));
    }
    Ok(())
}

/// Quadratic-form coefficients of a policy's discounted value
/// `V(s) = −(sᵀPs + 2pᵀs + c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticValue {
    pub p_mat: DMatrix<f64>,
    pub p_vec: DVector<f64>,
    pub c: f64,
}

impl LinearGaussianEnv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        noise_cov: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        init_mean: DVector<f64>,
        init_cov: DMatrix<f64>,
        horizon: usize,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        if n == 0 || m == 0 {
            return Err(Error::InputShape("state and action dims must be positive".into()));
        }
        check_shape(&a, n, n, "A")?;
        check_shape(&b, n, m, "B")?;
        check_shape(&noise_cov, n, n, "noise covariance")?;
        check_shape(&q, n, n, "Q")?;
        check_shape(&r, m, m, "R")?;
        check_shape(&init_cov, n, n, "initial covariance")?;
        if init_mean.len() != n {
            return Err(Error::InputShape(format!("initial mean has {} entries, expected {n}", init_mean.len())));
        }
        let rho = spectral_radius(&a);
        if rho >= 1.0 {
            return Err(Error::Config(format!("A has spectral radius {rho} >= 1")));
        }
        for (mat, what) in [(&q, "Q"), (&r, "R")] {
            let sym = (mat + mat.transpose()) * 0.5;
            if sym.symmetric_eigenvalues().iter().any(|e| *e < -1e-12) {
                return Err(Error::Config(format!("{what} is not positive semidefinite")));
            }
        }
        let noise_chol = cholesky(&noise_cov, "noise covariance")?;
        let init_chol = cholesky_psd(&init_cov, "initial covariance")?;
        Ok(LinearGaussianEnv {
            a,
            b,
            noise_cov,
            q,
            r,
            init_mean,
            init_cov,
            horizon,
            reward_noise_std: 0.0,
            noise_chol,
            init_chol,
        })
    }

    pub fn with_reward_noise(mut self, std: f64) -> Result<Self> {
        if !(std.is_finite() && std >= 0.0) {
            return Err(Error::Config(format!("reward noise std {std} must be finite and >= 0")));
        }
        self.reward_noise_std = std;
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    /// Random stable instance: `A` rescaled to spectral radius 0.9, a
    /// correlated noise covariance, `Q = I`, `R = 0.1 I`, `s₀ ~ N(0, I)`.
    pub fn random_stable(state_dim: usize, action_dim: usize, horizon: usize, seed: u64) -> Result<Self> {
        let mut rng = rng::root(seed);
        let mut gauss = |r, c| DMatrix::from_fn(r, c, |_, _| rng::standard_normal(&mut rng));
        let raw = gauss(state_dim, state_dim);
        let a = &raw * (0.9 / spectral_radius(&raw).max(1e-12));
        let b = gauss(state_dim, action_dim) / (state_dim as f64).sqrt();
        let f = gauss(state_dim, state_dim);
        let noise_cov = (&f * f.transpose()) * (0.1 / state_dim as f64) + DMatrix::identity(state_dim, state_dim) * 0.01;
        Self::new(
            a,
            b,
            noise_cov,
            DMatrix::identity(state_dim, state_dim),
            DMatrix::identity(action_dim, action_dim) * 0.1,
            DVector::zeros(state_dim),
            DMatrix::identity(state_dim, state_dim),
            horizon,
        )
    }

    /// The fixed instance used when no matrices are configured.
    pub fn default_instance() -> Self {
        Self::random_stable(4, 2, 200, 20_240_601).expect("default instance is valid")
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn init_mean(&self) -> &DVector<f64> {
        &self.init_mean
    }

    pub fn init_cov(&self) -> &DMatrix<f64> {
        &self.init_cov
    }

    pub fn reward_noise_std(&self) -> f64 {
        self.reward_noise_std
    }

    /// Expected reward `−(sᵀQs + aᵀRa)` at a given state and action.
    pub fn mean_reward(&self, s: &[f64], a: &[f64]) -> f64 {
        -(quad(&self.q, s) + quad(&self.r, a))
    }

    /// Deterministic part of the transition, `A s + B a`.
    pub fn mean_next(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let n = self.a.nrows();
        (0..n)
            .map(|i| {
                (0..n).map(|j| self.a[(i, j)] * s[j]).sum::<f64>()
                    + (0..self.b.ncols()).map(|j| self.b[(i, j)] * a[j]).sum::<f64>()
            })
            .collect()
    }

    pub fn closed_loop(&self, policy: &GaussianLinearPolicy) -> Result<DMatrix<f64>> {
        self.check_policy(policy)?;
        Ok(&self.a + &self.b * &policy.gain)
    }

    fn check_policy(&self, policy: &GaussianLinearPolicy) -> Result<()> {
        if policy.gain.shape() != (self.b.ncols(), self.a.nrows()) {
            return Err(Error::InputShape(format!(
                "policy gain is {:?}, environment needs ({}, {})",
                policy.gain.shape(),
                self.b.ncols(),
                self.a.nrows()
            )));
        }
        Ok(())
    }

    /// Exact `E[Σ_{t<H} γᵗ r_{t+1}]` with `s₀ ~ N(μ₀, Σ₀)`.
    pub fn analytic_value(&self, policy: &GaussianLinearPolicy, gamma: f64, horizon: usize) -> Result<f64> {
        self.analytic_value_from(policy, gamma, horizon, &self.init_mean, &self.init_cov)
    }

    /// As [`Self::analytic_value`] for any start distribution with the
    /// given mean and covariance; the value depends on no other moment, so
    /// this is also exact for an empirical start set.
    pub fn analytic_value_from(
        &self,
        policy: &GaussianLinearPolicy,
        gamma: f64,
        horizon: usize,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
    ) -> Result<f64> {
        let a_cl = self.closed_loop(policy)?;
        let k = &policy.gain;
        let d = DMatrix::from_diagonal(&policy.noise_std.map(|s| s * s));
        let drive = &self.b * &policy.bias;
        let process = &self.b * &d * self.b.transpose() + &self.noise_cov;
        let (mut mu, mut c) = (mean.clone(), cov.clone());
        let mut value = 0.0;
        let mut discount = 1.0;
        for t in 0..horizon {
            let second_s = &c + &mu * mu.transpose();
            let a_mean = k * &mu + &policy.bias;
            let a_cov = k * &c * k.transpose() + &d;
            let second_a = a_cov + &a_mean * a_mean.transpose();
            let reward = -((&self.q * second_s).trace() + (&self.r * second_a).trace());
            value += discount * reward;
            if !value.is_finite() || value.abs() > OVERFLOW_LIMIT {
                return Err(Error::Overflow(format!("closed-loop value blows up at step {t}")));
            }
            discount *= gamma;
            mu = &a_cl * &mu + &drive;
            c = &a_cl * &c * a_cl.transpose() + &process;
        }
        Ok(value)
    }

    /// Infinite-horizon discounted value of a linear policy as a quadratic
    /// form; needs `γ < 1` and `γ ρ(A + BK)² < 1`.
    pub fn discounted_value(&self, policy: &GaussianLinearPolicy, gamma: f64) -> Result<QuadraticValue> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Config(format!("discounted value needs 0 <= gamma < 1, got {gamma}")));
        }
        let a_cl = self.closed_loop(policy)?;
        let rho = spectral_radius(&a_cl);
        if gamma * rho * rho >= 1.0 {
            return Err(Error::Overflow(format!("closed loop radius {rho} too large for gamma {gamma}")));
        }
        let n = self.a.nrows();
        let (k, kb) = (&policy.gain, &policy.bias);
        let d = DMatrix::from_diagonal(&policy.noise_std.map(|s| s * s));
        let rhs = &self.q + k.transpose() * &self.r * k;
        // vec(P) = (I − γ A_clᵀ ⊗ A_clᵀ)⁻¹ vec(rhs), column-major vec.
        let at = a_cl.transpose();
        let kron = at.kronecker(&at);
        let system = DMatrix::identity(n * n, n * n) - kron * gamma;
        let vec_rhs = DVector::from_column_slice(rhs.as_slice());
        let vec_p = system
            .lu()
            .solve(&vec_rhs)
            .ok_or_else(|| Error::Overflow("discounted Lyapunov system is singular".into()))?;
        let p_raw = DMatrix::from_column_slice(n, n, vec_p.as_slice());
        let p_mat = (&p_raw + p_raw.transpose()) * 0.5;
        let bk = &self.b * kb;
        let lin_rhs = k.transpose() * &self.r * kb + (&at * (&p_mat * &bk)) * gamma;
        let p_vec = (DMatrix::identity(n, n) - &at * gamma)
            .lu()
            .solve(&lin_rhs)
            .ok_or_else(|| Error::Overflow("discounted linear system is singular".into()))?;
        let process = &self.b * &d * self.b.transpose() + &self.noise_cov;
        let per_step = (kb.transpose() * &self.r * kb)[(0, 0)]
            + (&self.r * &d).trace()
            + gamma * ((bk.transpose() * &p_mat * &bk)[(0, 0)] + (&p_mat * process).trace() + 2.0 * p_vec.dot(&bk));
        Ok(QuadraticValue { p_mat, p_vec, c: per_step / (1.0 - gamma) })
    }

    /// Optimal linear feedback `a = K s` for the discounted problem, by
    /// Riccati iteration.
    pub fn lqr_gain(&self, gamma: f64) -> Result<DMatrix<f64>> {
        let (a, b, q, r) = (&self.a, &self.b, &self.q, &self.r);
        let mut p = q.clone();
        for _ in 0..100_000 {
            let btp = b.transpose() * &p;
            let s = r + &btp * b * gamma;
            let s_inv = s
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::Config("R + γBᵀPB is singular".into()))?;
            let next = q + (a.transpose() * &p * a) * gamma - (a.transpose() * p.transpose() * b) * &s_inv * (&btp * a) * (gamma * gamma);
            let next = (&next + next.transpose()) * 0.5;
            let delta = (&next - &p).abs().max();
            p = next;
            if delta <= 1e-12 * p.abs().max().max(1.0) {
                let s_inv = (r + b.transpose() * &p * b * gamma).try_inverse().expect("checked above");
                return Ok(-(s_inv * b.transpose() * &p * a) * gamma);
            }
        }
        Err(Error::Overflow("Riccati iteration did not converge".into()))
    }
}

fn quad(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let k = x.len();
    let mut total = 0.0;
    for i in 0..k {
        for j in 0..k {
            total += x[i] * m[(i, j)] * x[j];
        }
    }
    total
}

impl Environment for LinearGaussianEnv {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn action_dim(&self) -> usize {
        self.b.ncols()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&self, rng: &mut Stream) -> Vec<f64> {
        let n = self.state_dim();
        let z: Vec<f64> = (0..n).map(|_| rng::standard_normal(rng)).collect();
        (0..n)
            .map(|i| self.init_mean[i] + (0..=i).map(|j| self.init_chol[(i, j)] * z[j]).sum::<f64>())
            .collect()
    }

    fn step(&self, s: &[f64], a: &[f64], rng: &mut Stream) -> (Vec<f64>, f64) {
        let n = self.state_dim();
        let mut next = self.mean_next(s, a);
        let z: Vec<f64> = (0..n).map(|_| rng::standard_normal(rng)).collect();
        for (i, v) in next.iter_mut().enumerate() {
            *v += (0..=i).map(|j| self.noise_chol[(i, j)] * z[j]).sum::<f64>();
        }
        let mut reward = self.mean_reward(s, a);
        if self.reward_noise_std > 0.0 {
            reward += self.reward_noise_std * rng::standard_normal(rng);
        }
        (next, reward)
    }
}

/// A linear-Gaussian system whose process noise has the chain covariance
/// `Σ_ij = σ² ρ^|i−j|`: the hard case for a diagonal-covariance model.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatedChainEnv {
    inner: LinearGaussianEnv,
    rho: f64,
}

impl CorrelatedChainEnv {
    pub const DEFAULT_RHO: f64 = 0.9;

    /// `A = 0.8 I + 0.1 (superdiagonal)`, `B` spreads each action over the
    /// chain, `Q = I`, `R = 0.1 I`, `s₀ ~ N(0, I)`.
    pub fn new(state_dim: usize, action_dim: usize, rho: f64, sigma: f64, horizon: usize) -> Result<Self> {
        if !(rho.abs() < 1.0) || rho == 0.0 {
            return Err(Error::Config(format!("chain correlation {rho} must satisfy 0 < |rho| < 1")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("chain noise scale {sigma} must be positive")));
        }
        let n = state_dim;
        let a = DMatrix::from_fn(n, n, |i, j| match j as isize - i as isize {
            0 => 0.8,
            1 => 0.1,
            _ => 0.0,
        });
        let b = DMatrix::from_fn(n, action_dim, |i, j| if (i + j) % 2 == 0 { 0.5 } else { -0.25 });
        let noise_cov = DMatrix::from_fn(n, n, |i, j| sigma * sigma * rho.powi((i as i32 - j as i32).abs()));
        let inner = LinearGaussianEnv::new(
            a,
            b,
            noise_cov,
            DMatrix::identity(n, n),
            DMatrix::identity(action_dim, action_dim) * 0.1,
            DVector::zeros(n),
            DMatrix::identity(n, n),
            horizon,
        )?;
        let env = CorrelatedChainEnv { inner, rho };
        if env.nll_gap() <= 0.0 {
            return Err(Error::Config("chain covariance has no off-diagonal information".into()));
        }
        Ok(env)
    }

    pub fn default_instance() -> Self {
        Self::new(4, 1, Self::DEFAULT_RHO, 0.5, 200).expect("default chain is valid")
    }

    pub fn with_reward_noise(mut self, std: f64) -> Result<Self> {
        self.inner = self.inner.with_reward_noise(std)?;
        Ok(self)
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn linear(&self) -> &LinearGaussianEnv {
        &self.inner
    }

    /// `½ log(det Diag(Σ) / det Σ)`: the per-transition NLL a
    /// diagonal-Gaussian model must lose against the true conditional.
    pub fn nll_gap(&self) -> f64 {
        let cov = self.inner.noise_cov();
        let log_det = 2.0 * self.inner.noise_chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_diag: f64 = cov.diagonal().iter().map(|v| v.ln()).sum();
        0.5 * (log_diag - log_det)
    }
}

impl Environment for CorrelatedChainEnv {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }

    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn reset(&self, rng: &mut Stream) -> Vec<f64> {
        self.inner.reset(rng)
    }

    fn step(&self, s: &[f64], a: &[f64], rng: &mut Stream) -> (Vec<f64>, f64) {
        self.inner.step(s, a, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy(gain: DMatrix<f64>, noise: f64) -> GaussianLinearPolicy {
        let m = gain.nrows();
        GaussianLinearPolicy::new(gain, DVector::zeros(m), DVector::from_element(m, noise)).unwrap()
    }

    #[test]
    fn zero_cost_gives_zero_value() {
        let env = LinearGaussianEnv::random_stable(3, 1, 10, 2).unwrap();
        let env = LinearGaussianEnv::new(
            env.a.clone(),
            env.b.clone(),
            env.noise_cov.clone(),
            DMatrix::zeros(3, 3),
            DMatrix::zeros(1, 1),
            DVector::zeros(3),
            DMatrix::identity(3, 3),
            10,
        )
        .unwrap();
        assert_eq!(env.analytic_value(&policy(DMatrix::zeros(1, 3), 0.3), 0.9, 10).unwrap(), 0.0);
    }

    #[test]
    fn single_step_trace_identity() {
        let n = 3;
        let env = LinearGaussianEnv::new(
            DMatrix::identity(n, n) * 0.5,
            DMatrix::from_element(n, 1, 1.0),
            DMatrix::identity(n, n),
            DMatrix::identity(n, n),
            DMatrix::zeros(1, 1),
            DVector::zeros(n),
            DMatrix::identity(n, n),
            1,
        )
        .unwrap();
        let v = env.analytic_value(&policy(DMatrix::from_element(1, n, 0.2), 0.5), 1.0, 1).unwrap();
        assert!((v + n as f64).abs() < 1e-12);
    }

    #[test]
    fn unstable_data_rejected() {
        let r = LinearGaussianEnv::new(
            DMatrix::identity(2, 2) * 1.01,
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            5,
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn exploding_closed_loop_hits_overflow_guard() {
        let env = LinearGaussianEnv::new(
            DMatrix::identity(1, 1) * 0.5,
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
            DMatrix::identity(1, 1),
            10,
        )
        .unwrap();
        let bad = policy(DMatrix::from_element(1, 1, 1e3), 0.0);
        assert!(matches!(env.analytic_value(&bad, 1.0, 200), Err(Error::Overflow(_))));
    }

    #[test]
    fn chain_gap_matches_toeplitz_determinant() {
        let env = CorrelatedChainEnv::default_instance();
        // det of the ρ^|i−j| Toeplitz matrix is (1 − ρ²)^(n−1).
        let expected = -0.5 * 3.0 * (1.0f64 - 0.81).ln();
        assert!((env.nll_gap() - expected).abs() < 1e-12);
        assert!(env.nll_gap() > 0.2);
        assert!(CorrelatedChainEnv::new(4, 1, 0.0, 0.5, 10).is_err());
    }

    #[test]
    fn discounted_value_satisfies_bellman_equation() {
        let env = LinearGaussianEnv::random_stable(3, 2, 50, 9).unwrap();
        let pol = GaussianLinearPolicy::new(
            DMatrix::from_fn(2, 3, |i, j| 0.1 * (i as f64 - j as f64)),
            DVector::from_vec(vec![0.2, -0.1]),
            DVector::from_vec(vec![0.3, 0.1]),
        )
        .unwrap();
        let gamma = 0.9;
        let qv = env.discounted_value(&pol, gamma).unwrap();
        // Long finite horizons from a point mass converge to V(s).
        let s = DVector::from_vec(vec![0.5, -1.0, 0.25]);
        let v_inf = -((s.transpose() * &qv.p_mat * &s)[(0, 0)] + 2.0 * qv.p_vec.dot(&s) + qv.c);
        let v_long = env.analytic_value_from(&pol, gamma, 2000, &s, &DMatrix::zeros(3, 3)).unwrap();
        assert!((v_inf - v_long).abs() < 1e-8 * v_long.abs().max(1.0), "{v_inf} vs {v_long}");
    }

    #[test]
    fn lqr_gain_beats_perturbations() {
        let env = LinearGaussianEnv::random_stable(3, 2, 50, 5).unwrap();
        let gamma = 0.95;
        let k = env.lqr_gain(gamma).unwrap();
        let value = |g: &DMatrix<f64>| {
            let qv = env.discounted_value(&policy(g.clone(), 0.0), gamma).unwrap();
            -(qv.p_mat.trace() + qv.c)
        };
        let best = value(&k);
        let mut rng = rng::root(3);
        for _ in 0..20 {
            let d = DMatrix::from_fn(2, 3, |_, _| 0.05 * rng::standard_normal(&mut rng));
            assert!(value(&(&k + d)) <= best + 1e-9);
        }
    }
}
