use super::gaussian::{clamp_log_variance, gaussian_entropy, gaussian_nll, GaussianPrediction};
use super::{check_action, check_state, Design, NormalizationStats};
use crate::data::TransitionDataset;
use crate::error::{Error, Result};
use crate::nn::{mlp_predict, Matrix, MlpSpec, ParameterSet};
use crate::rng::{self, Stream};

/// Diagonal-Gaussian model over `(s', r')`: one network maps `(s, a)` to
/// `n + 1` means and `n + 1` log-variances. Index `n` is the reward.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardDynamics {
    spec: MlpSpec,
    params: ParameterSet,
    stats: NormalizationStats,
}

impl FeedforwardDynamics {
    pub fn architecture(state_dim: usize, action_dim: usize, hidden: Vec<usize>) -> Result<MlpSpec> {
        MlpSpec::new(state_dim + action_dim, hidden, 2 * (state_dim + 1))
    }

    /// Freshly initialized model with identity normalization.
    pub fn new(state_dim: usize, action_dim: usize, hidden: Vec<usize>, seed: u64) -> Result<Self> {
        let spec = Self::architecture(state_dim, action_dim, hidden)?;
        let params = ParameterSet::init(&spec, seed);
        Self::from_parts(spec, params, NormalizationStats::identity(state_dim, action_dim))
    }

    pub fn from_parts(spec: MlpSpec, params: ParameterSet, stats: NormalizationStats) -> Result<Self> {
        let (n, m) = (stats.state_dim(), stats.action_dim());
        if spec.input_dim != n + m || spec.output_dim != 2 * (n + 1) {
            return Err(Error::InputShape(format!(
                "feedforward network {}->{} does not fit n = {n}, m = {m}",
                spec.input_dim, spec.output_dim
            )));
        }
        if params.len() != spec.param_count() {
            return Err(Error::InputShape("parameter count does not match architecture".into()));
        }
        Ok(FeedforwardDynamics { spec, params, stats })
    }

    pub fn state_dim(&self) -> usize {
        self.stats.state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.stats.action_dim()
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn stats(&self) -> &NormalizationStats {
        &self.stats
    }

    pub fn set_stats(&mut self, stats: NormalizationStats) -> Result<()> {
        if stats.state_dim() != self.state_dim() || stats.action_dim() != self.action_dim() {
            return Err(Error::InputShape("normalization dims do not match model".into()));
        }
        self.stats = stats;
        Ok(())
    }

    fn input_rows(&self, states: &Matrix, actions: &Matrix) -> Matrix {
        let (n, m) = (self.state_dim(), self.action_dim());
        let mut x = Matrix::zeros(states.rows(), n + m);
        for r in 0..states.rows() {
            let row = x.row_mut(r);
            for (j, v) in states.row(r).iter().enumerate() {
                row[j] = (v - self.stats.state_mean[j]) / self.stats.state_std[j];
            }
            for (j, v) in actions.row(r).iter().enumerate() {
                row[n + j] = (v - self.stats.action_mean[j]) / self.stats.action_std[j];
            }
        }
        x
    }

    fn forward(&self, states: &Matrix, actions: &Matrix) -> Result<Matrix> {
        if states.cols() != self.state_dim() || actions.cols() != self.action_dim() || states.rows() != actions.rows() {
            return Err(Error::InputShape(format!(
                "expected rows of (s[{}], a[{}]), got {}x{} and {}x{}",
                self.state_dim(),
                self.action_dim(),
                states.rows(),
                states.cols(),
                actions.rows(),
                actions.cols()
            )));
        }
        mlp_predict(&self.spec, &self.params, &self.input_rows(states, actions))
    }

    /// Normalized-space prediction for one `(s, a)`.
    pub fn predict(&self, s: &[f64], a: &[f64]) -> Result<GaussianPrediction> {
        check_state(s, self.state_dim())?;
        check_action(a, self.action_dim())?;
        let out = self.forward(&Matrix::from_vec(1, s.len(), s.to_vec()), &Matrix::from_vec(1, a.len(), a.to_vec()))?;
        let k = self.state_dim() + 1;
        let row = out.row(0);
        Ok(GaussianPrediction::from_raw(row[..k].to_vec(), row[k..].to_vec()))
    }

    /// Mean NLL per transition in raw units, split by target dimension.
    pub fn nll_per_dim(&self, batch: &TransitionDataset) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("NLL of an empty batch".into()));
        }
        let design = self.design(batch, None)?;
        let out = mlp_predict(&self.spec, &self.params, &design.inputs)?;
        let k = self.state_dim() + 1;
        let mut per_dim = vec![0.0; k];
        for r in 0..out.rows() {
            let row = out.row(r);
            for (j, acc) in per_dim.iter_mut().enumerate() {
                *acc += gaussian_nll(design.targets.get(r, j), row[j], clamp_log_variance(row[k + j]));
            }
        }
        let b = batch.len() as f64;
        Ok(per_dim
            .into_iter()
            .enumerate()
            .map(|(j, s)| s / b + self.stats.target_log_scale(j))
            .collect())
    }

    /// Mean NLL per transition in raw units.
    pub fn nll(&self, batch: &TransitionDataset) -> Result<f64> {
        Ok(self.nll_per_dim(batch)?.iter().sum())
    }

    /// Mean over the batch of the model's differential entropy at each
    /// `(s, a)`, in raw units.
    pub fn mean_entropy(&self, batch: &TransitionDataset) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("entropy of an empty batch".into()));
        }
        let design = self.design(batch, None)?;
        let out = mlp_predict(&self.spec, &self.params, &design.inputs)?;
        let k = self.state_dim() + 1;
        let total: f64 = (0..out.rows())
            .map(|r| out.row(r)[k..].iter().map(|l| gaussian_entropy(clamp_log_variance(*l))).sum::<f64>())
            .sum();
        Ok(total / batch.len() as f64 + self.stats.target_log_jacobian())
    }

    /// One network row per transition; targets are the normalized
    /// `(s', r')`. With `noise`, Gaussian noise of that standard deviation is
    /// added to the normalized state and action inputs.
    pub fn design(&self, batch: &TransitionDataset, noise: Option<(f64, &mut Stream)>) -> Result<Design> {
        let (n, m) = (self.state_dim(), self.action_dim());
        if batch.state_dim() != n || batch.action_dim() != m {
            return Err(Error::InputShape(format!(
                "batch dims ({}, {}) do not match model ({n}, {m})",
                batch.state_dim(),
                batch.action_dim()
            )));
        }
        let states = Matrix::from_vec(batch.len(), n, batch.states().to_vec());
        let actions = Matrix::from_vec(batch.len(), m, batch.actions().to_vec());
        let mut inputs = self.input_rows(&states, &actions);
        if let Some((sigma, rng)) = noise {
            if sigma > 0.0 {
                for v in inputs.as_mut_slice() {
                    *v += sigma * rng::standard_normal(rng);
                }
            }
        }
        let mut targets = Matrix::zeros(batch.len(), n + 1);
        for (r, t) in batch.iter().enumerate() {
            let row = targets.row_mut(r);
            for (j, v) in t.next_state.iter().enumerate() {
                row[j] = self.stats.normalize_target(j, *v);
            }
            row[n] = self.stats.normalize_reward(t.reward);
        }
        Ok(Design {
            inputs,
            targets,
            transitions: batch.len(),
        })
    }

    /// Draws `(s', r')` for every row, each row from its own stream, in
    /// environment units.
    pub fn sample_batch(&self, states: &Matrix, actions: &Matrix, streams: &mut [Stream]) -> Result<(Matrix, Vec<f64>)> {
        let out = self.forward(states, actions)?;
        if streams.len() != out.rows() {
            return Err(Error::InputShape(format!("{} streams for {} rows", streams.len(), out.rows())));
        }
        let n = self.state_dim();
        let k = n + 1;
        let mut next = Matrix::zeros(out.rows(), n);
        let mut rewards = Vec::with_capacity(out.rows());
        for (r, rng) in streams.iter_mut().enumerate() {
            let row = out.row(r);
            let mut draw = |j: usize| {
                let std = (0.5 * clamp_log_variance(row[k + j])).exp();
                self.stats.denormalize_target(j, row[j] + std * rng::standard_normal(rng))
            };
            let next_row = next.row_mut(r);
            for (j, slot) in next_row.iter_mut().enumerate() {
                *slot = draw(j);
            }
            rewards.push(draw(n));
        }
        Ok((next, rewards))
    }
}
