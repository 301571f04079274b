use super::gaussian::{clamp_log_variance, gaussian_entropy, gaussian_nll, GaussianPrediction};
use super::{check_action, check_state, Design, NormalizationStats};
use crate::data::TransitionDataset;
use crate::error::{Error, Result};
use crate::nn::{mlp_predict, Matrix, MlpSpec, ParameterSet};
use crate::rng::{self, Stream};

/// Autoregressive model: one network predicts a single target dimension at
/// a time, conditioned on `(s, a)`, the already generated next-state
/// dimensions, and a one-hot selecting the dimension.
///
/// Input row layout (width `3n + m + 1`):
///
/// ```text
/// [ s (n) | a (m) | previous next-state dims (n) | one-hot over n + 1 targets ]
/// ```
///
/// The previous-dims block and the one-hot are indexed by state dimension;
/// slot `n` of the one-hot is the reward. Generation step `k < n` predicts
/// state dimension `order[k]`; step `n` predicts the reward given all of `s'`.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoregressiveDynamics {
    spec: MlpSpec,
    params: ParameterSet,
    stats: NormalizationStats,
    order: Vec<usize>,
}

fn check_order(order: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if order.len() != n {
        return Err(Error::Config(format!("dimension order has {} entries, need {n}", order.len())));
    }
    for &d in order {
        if d >= n || seen[d] {
            return Err(Error::Config(format!("dimension order {order:?} is not a permutation of 0..{n}")));
        }
        seen[d] = true;
    }
    Ok(())
}

impl AutoregressiveDynamics {
    pub fn input_width(state_dim: usize, action_dim: usize) -> usize {
        3 * state_dim + action_dim + 1
    }

    pub fn architecture(state_dim: usize, action_dim: usize, hidden: Vec<usize>) -> Result<MlpSpec> {
        MlpSpec::new(Self::input_width(state_dim, action_dim), hidden, 2)
    }

    /// Freshly initialized model with identity normalization and the
    /// default (column) dimension order.
    pub fn new(state_dim: usize, action_dim: usize, hidden: Vec<usize>, seed: u64) -> Result<Self> {
        let spec = Self::architecture(state_dim, action_dim, hidden)?;
        let params = ParameterSet::init(&spec, seed);
        Self::from_parts(
            spec,
            params,
            NormalizationStats::identity(state_dim, action_dim),
            (0..state_dim).collect(),
        )
    }

    pub fn from_parts(
        spec: MlpSpec,
        params: ParameterSet,
        stats: NormalizationStats,
        order: Vec<usize>,
    ) -> Result<Self> {
        let (n, m) = (stats.state_dim(), stats.action_dim());
        check_order(&order, n)?;
        if spec.input_dim != Self::input_width(n, m) || spec.output_dim != 2 {
            return Err(Error::InputShape(format!(
                "autoregressive network {}->{} does not fit n = {n}, m = {m}",
                spec.input_dim, spec.output_dim
            )));
        }
        if params.len() != spec.param_count() {
            return Err(Error::InputShape("parameter count does not match architecture".into()));
        }
        Ok(AutoregressiveDynamics {
            spec,
            params,
            stats,
            order,
        })
    }

    pub fn with_order(mut self, order: Vec<usize>) -> Result<Self> {
        check_order(&order, self.state_dim())?;
        self.order = order;
        Ok(self)
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

    pub fn dimension_order(&self) -> &[usize] {
        &self.order
    }

    pub fn set_stats(&mut self, stats: NormalizationStats) -> Result<()> {
        if stats.state_dim() != self.state_dim() || stats.action_dim() != self.action_dim() {
            return Err(Error::InputShape("normalization dims do not match model".into()));
        }
        self.stats = stats;
        Ok(())
    }

    /// Target dimension predicted at generation step `k` (`n` = reward).
    #[inline]
    pub fn target_at(&self, k: usize) -> usize {
        if k < self.state_dim() {
            self.order[k]
        } else {
            self.state_dim()
        }
    }

    /// Forward passes needed to sample one transition.
    pub fn sampling_passes(&self) -> usize {
        self.state_dim() + 1
    }

    /// Writes one input row. `prev` is in normalized units.
    fn fill_row(&self, row: &mut [f64], s_norm: &[f64], a_norm: &[f64], prev: &[f64], k: usize) {
        let (n, m) = (self.state_dim(), self.action_dim());
        row[..n].copy_from_slice(s_norm);
        row[n..n + m].copy_from_slice(a_norm);
        row[n + m..2 * n + m].copy_from_slice(prev);
        let onehot = &mut row[2 * n + m..];
        onehot.iter_mut().for_each(|v| *v = 0.0);
        onehot[self.target_at(k)] = 1.0;
    }

    /// Conditional Gaussian of generation step `index` given normalized
    /// previous next-state dims `prev` (indexed by state dimension).
    ///
    /// Entries of `prev` for dimensions not yet generated at `index` must be
    /// zero. The prediction is in normalized units.
    pub fn predict_dim(&self, s: &[f64], a: &[f64], prev: &[f64], index: usize) -> Result<GaussianPrediction> {
        let n = self.state_dim();
        check_state(s, n)?;
        check_action(a, self.action_dim())?;
        if prev.len() != n {
            return Err(Error::InputShape(format!("previous-dims buffer has {} entries, need {n}", prev.len())));
        }
        if index > n {
            return Err(Error::InputShape(format!("generation index {index} exceeds {n}")));
        }
        for &d in &self.order[index.min(n)..] {
            if prev[d] != 0.0 {
                return Err(Error::MaskingViolation(format!(
                    "dimension {d} is not generated before step {index} but carries {}",
                    prev[d]
                )));
            }
        }
        let mut x = Matrix::zeros(1, self.spec.input_dim);
        let s_norm = self.stats.normalize_state(s);
        let a_norm = self.stats.normalize_action(a);
        self.fill_row(x.row_mut(0), &s_norm, &a_norm, prev, index);
        let out = mlp_predict(&self.spec, &self.params, &x)?;
        Ok(GaussianPrediction::from_raw(vec![out.get(0, 0)], vec![out.get(0, 1)]))
    }

    /// Teacher-forced expansion: `n + 1` rows per transition, row `k` of a
    /// transition sees the ground-truth values of the dimensions generated
    /// before step `k` and zeros elsewhere.
    pub fn design(&self, batch: &TransitionDataset, mut noise: Option<(f64, &mut Stream)>) -> Result<Design> {
        let (n, m) = (self.state_dim(), self.action_dim());
        if batch.state_dim() != n || batch.action_dim() != m {
            return Err(Error::InputShape(format!(
                "batch dims ({}, {}) do not match model ({n}, {m})",
                batch.state_dim(),
                batch.action_dim()
            )));
        }
        let rows = batch.len() * (n + 1);
        let mut inputs = Matrix::zeros(rows, self.spec.input_dim);
        let mut targets = Matrix::zeros(rows, 1);
        let mut prev = vec![0.0; n];
        for (t, tr) in batch.iter().enumerate() {
            let mut s_norm = self.stats.normalize_state(tr.state);
            let mut a_norm = self.stats.normalize_action(tr.action);
            if let Some((sigma, rng)) = noise.as_mut() {
                if *sigma > 0.0 {
                    for v in s_norm.iter_mut().chain(a_norm.iter_mut()) {
                        *v += *sigma * rng::standard_normal(rng);
                    }
                }
            }
            prev.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..=n {
                let r = t * (n + 1) + k;
                self.fill_row(inputs.row_mut(r), &s_norm, &a_norm, &prev, k);
                let dim = self.target_at(k);
                let target = if dim < n {
                    self.stats.normalize_target(dim, tr.next_state[dim])
                } else {
                    self.stats.normalize_reward(tr.reward)
                };
                targets.set(r, 0, target);
                if dim < n {
                    prev[dim] = target;
                }
            }
        }
        Ok(Design {
            inputs,
            targets,
            transitions: batch.len(),
        })
    }

    /// Mean NLL per transition in raw units, split by target dimension
    /// (state dims in column order, reward last). Evaluated with the
    /// masked expansion in a single forward pass.
    pub fn nll_per_dim(&self, batch: &TransitionDataset) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("NLL of an empty batch".into()));
        }
        let n = self.state_dim();
        let design = self.design(batch, None)?;
        let out = mlp_predict(&self.spec, &self.params, &design.inputs)?;
        let mut per_dim = vec![0.0; n + 1];
        for r in 0..out.rows() {
            let dim = self.target_at(r % (n + 1));
            per_dim[dim] += gaussian_nll(design.targets.get(r, 0), out.get(r, 0), clamp_log_variance(out.get(r, 1)));
        }
        let b = batch.len() as f64;
        Ok(per_dim
            .into_iter()
            .enumerate()
            .map(|(j, s)| s / b + self.stats.target_log_scale(j))
            .collect())
    }

    pub fn nll(&self, batch: &TransitionDataset) -> Result<f64> {
        Ok(self.nll_per_dim(batch)?.iter().sum())
    }

    /// Same quantity as [`Self::nll`], computed one conditional at a time
    /// through [`Self::predict_dim`].
    pub fn nll_sequential(&self, batch: &TransitionDataset) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("NLL of an empty batch".into()));
        }
        let n = self.state_dim();
        let mut total = 0.0;
        for tr in batch.iter() {
            let mut prev = vec![0.0; n];
            for k in 0..=n {
                let dim = self.target_at(k);
                let p = self.predict_dim(tr.state, tr.action, &prev, k)?;
                let x = if dim < n {
                    self.stats.normalize_target(dim, tr.next_state[dim])
                } else {
                    self.stats.normalize_reward(tr.reward)
                };
                total += gaussian_nll(x, p.mean[0], p.log_variance[0]);
                if dim < n {
                    prev[dim] = x;
                }
            }
        }
        Ok(total / batch.len() as f64 + self.stats.target_log_jacobian())
    }

    /// Mean over the batch of the summed conditional entropies along each
    /// transition's own next state, in raw units.
    pub fn mean_entropy(&self, batch: &TransitionDataset) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("entropy of an empty batch".into()));
        }
        let design = self.design(batch, None)?;
        let out = mlp_predict(&self.spec, &self.params, &design.inputs)?;
        let total: f64 = (0..out.rows())
            .map(|r| gaussian_entropy(clamp_log_variance(out.get(r, 1))))
            .sum();
        Ok(total / batch.len() as f64 + self.stats.target_log_jacobian())
    }

    /// Sequential sampling: `n + 1` batched forward passes, each sampled
    /// value fed back as a conditioning input; the reward comes last.
    pub fn sample_batch(&self, states: &Matrix, actions: &Matrix, streams: &mut [Stream]) -> Result<(Matrix, Vec<f64>)> {
        let (n, m) = (self.state_dim(), self.action_dim());
        let rows = states.rows();
        if states.cols() != n || actions.cols() != m || actions.rows() != rows {
            return Err(Error::InputShape(format!(
                "expected rows of (s[{n}], a[{m}]), got {}x{} and {}x{}",
                rows,
                states.cols(),
                actions.rows(),
                actions.cols()
            )));
        }
        if streams.len() != rows {
            return Err(Error::InputShape(format!("{} streams for {rows} rows", streams.len())));
        }
        let s_norm: Vec<Vec<f64>> = (0..rows).map(|r| self.stats.normalize_state(states.row(r))).collect();
        let a_norm: Vec<Vec<f64>> = (0..rows).map(|r| self.stats.normalize_action(actions.row(r))).collect();
        let mut prev = Matrix::zeros(rows, n);
        let mut reward_z = vec![0.0; rows];
        let mut x = Matrix::zeros(rows, self.spec.input_dim);
        for k in 0..self.sampling_passes() {
            for r in 0..rows {
                let p = prev.row(r).to_vec();
                self.fill_row(x.row_mut(r), &s_norm[r], &a_norm[r], &p, k);
            }
            let out = mlp_predict(&self.spec, &self.params, &x)?;
            let dim = self.target_at(k);
            for (r, rng) in streams.iter_mut().enumerate() {
                let std = (0.5 * clamp_log_variance(out.get(r, 1))).exp();
                let z = out.get(r, 0) + std * rng::standard_normal(rng);
                if dim < n {
                    prev.set(r, dim, z);
                } else {
                    reward_z[r] = z;
                }
            }
        }
        let mut next = Matrix::zeros(rows, n);
        for r in 0..rows {
            next.row_mut(r).copy_from_slice(&self.stats.denormalize_state(prev.row(r)));
        }
        let rewards = reward_z.into_iter().map(|z| self.stats.denormalize_reward(z)).collect();
        Ok((next, rewards))
    }
}
