use crate::data::TransitionDataset;
use crate::error::{Error, Result};

/// Smallest standard deviation kept by [`NormalizationStats::fit`].
pub const STD_FLOOR: f64 = 1e-8;

/// Per-channel z-score statistics estimated on a training split.
///
/// Next states share the state statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub action_mean: Vec<f64>,
    pub action_std: Vec<f64>,
    pub reward_mean: f64,
    pub reward_std: f64,
}

fn column_stats(values: &[f64], width: usize, count: usize) -> (Vec<f64>, Vec<f64>) {
    if width == 0 {
        return (Vec::new(), Vec::new());
    }
    let mut mean = vec![0.0; width];
    for row in values.chunks_exact(width) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    let mut var = vec![0.0; width];
    for row in values.chunks_exact(width) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .into_iter()
        .map(|s| (s / count as f64).sqrt().max(STD_FLOOR))
        .collect();
    (mean, std)
}

impl NormalizationStats {
    /// Mean zero, unit scale: normalization is the identity.
    pub fn identity(state_dim: usize, action_dim: usize) -> Self {
        NormalizationStats {
            state_mean: vec![0.0; state_dim],
            state_std: vec![1.0; state_dim],
            action_mean: vec![0.0; action_dim],
            action_std: vec![1.0; action_dim],
            reward_mean: 0.0,
            reward_std: 1.0,
        }
    }

    /// Population mean and standard deviation of every column.
    pub fn fit(batch: &TransitionDataset) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("cannot fit normalization on an empty batch".into()));
        }
        let count = batch.len();
        let (state_mean, state_std) = column_stats(batch.states(), batch.state_dim(), count);
        let (action_mean, action_std) = column_stats(batch.actions(), batch.action_dim(), count);
        let (reward_mean, reward_std) = column_stats(batch.rewards(), 1, count);
        Ok(NormalizationStats {
            state_mean,
            state_std,
            action_mean,
            action_std,
            reward_mean: reward_mean[0],
            reward_std: reward_std[0],
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_mean.len()
    }

    pub fn action_dim(&self) -> usize {
        self.action_mean.len()
    }

    pub fn normalize_state(&self, s: &[f64]) -> Vec<f64> {
        zscore(s, &self.state_mean, &self.state_std)
    }

    pub fn denormalize_state(&self, z: &[f64]) -> Vec<f64> {
        unscore(z, &self.state_mean, &self.state_std)
    }

    pub fn normalize_action(&self, a: &[f64]) -> Vec<f64> {
        zscore(a, &self.action_mean, &self.action_std)
    }

    pub fn denormalize_action(&self, z: &[f64]) -> Vec<f64> {
        unscore(z, &self.action_mean, &self.action_std)
    }

    #[inline]
    pub fn normalize_reward(&self, r: f64) -> f64 {
        (r - self.reward_mean) / self.reward_std
    }

    #[inline]
    pub fn denormalize_reward(&self, z: f64) -> f64 {
        z * self.reward_std + self.reward_mean
    }

    /// Normalized value of target dimension `dim` (state dims then reward).
    #[inline]
    pub fn normalize_target(&self, dim: usize, x: f64) -> f64 {
        if dim < self.state_dim() {
            (x - self.state_mean[dim]) / self.state_std[dim]
        } else {
            self.normalize_reward(x)
        }
    }

    #[inline]
    pub fn denormalize_target(&self, dim: usize, z: f64) -> f64 {
        if dim < self.state_dim() {
            z * self.state_std[dim] + self.state_mean[dim]
        } else {
            self.denormalize_reward(z)
        }
    }

    /// `log |d raw / d normalized|` for target dimension `dim`.
    #[inline]
    pub fn target_log_scale(&self, dim: usize) -> f64 {
        if dim < self.state_dim() {
            self.state_std[dim].ln()
        } else {
            self.reward_std.ln()
        }
    }

    /// Log-Jacobian of the whole `(s', r')` target transform; added to a
    /// normalized-space NLL it gives the NLL in raw units.
    pub fn target_log_jacobian(&self) -> f64 {
        self.state_std.iter().map(|s| s.ln()).sum::<f64>() + self.reward_std.ln()
    }

    /// Normalizes every channel of a batch (next states with state stats).
    pub fn normalize_batch(&self, batch: &TransitionDataset) -> Result<TransitionDataset> {
        self.map_batch(batch, |x, m, s| (x - m) / s)
    }

    pub fn denormalize_batch(&self, batch: &TransitionDataset) -> Result<TransitionDataset> {
        self.map_batch(batch, |z, m, s| z * s + m)
    }

    fn map_batch(
        &self,
        batch: &TransitionDataset,
        f: impl Fn(f64, f64, f64) -> f64,
    ) -> Result<TransitionDataset> {
        if batch.state_dim() != self.state_dim() || batch.action_dim() != self.action_dim() {
            return Err(Error::InputShape("batch dims do not match normalization stats".into()));
        }
        let map = |values: &[f64], mean: &[f64], std: &[f64]| -> Vec<f64> {
            values
                .chunks_exact(mean.len().max(1))
                .flat_map(|row| row.iter().zip(mean).zip(std).map(|((x, m), s)| f(*x, *m, *s)))
                .collect()
        };
        let states = map(batch.states(), &self.state_mean, &self.state_std);
        let actions = if self.action_dim() == 0 {
            Vec::new()
        } else {
            map(batch.actions(), &self.action_mean, &self.action_std)
        };
        let rewards = batch
            .rewards()
            .iter()
            .map(|&r| f(r, self.reward_mean, self.reward_std))
            .collect();
        let next_states = map(batch.next_states(), &self.state_mean, &self.state_std);
        TransitionDataset::from_parts(
            batch.state_dim(),
            batch.action_dim(),
            states,
            actions,
            rewards,
            next_states,
        )
    }
}

fn zscore(x: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    x.iter().zip(mean).zip(std).map(|((v, m), s)| (v - m) / s).collect()
}

fn unscore(z: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    z.iter().zip(mean).zip(std).map(|((v, m), s)| v * s + m).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_point() -> TransitionDataset {
        let mut ds = TransitionDataset::new(2, 1);
        ds.push(&[0.0, 3.0], &[1.0], 5.0, &[0.0, 3.0]).unwrap();
        ds.push(&[2.0, 3.0], &[1.0], 5.0, &[2.0, 3.0]).unwrap();
        ds
    }

    #[test]
    fn hand_arithmetic_column() {
        let stats = NormalizationStats::fit(&two_point()).unwrap();
        assert_eq!(stats.state_mean[0], 1.0);
        assert_eq!(stats.state_std[0], 1.0);
        let norm = stats.normalize_batch(&two_point()).unwrap();
        assert_eq!(norm.state(0)[0], -1.0);
        assert_eq!(norm.state(1)[0], 1.0);
    }

    #[test]
    fn constant_column_is_floored_and_zeroed() {
        let stats = NormalizationStats::fit(&two_point()).unwrap();
        assert_eq!(stats.state_std[1], STD_FLOOR);
        assert_eq!(stats.action_std[0], STD_FLOOR);
        assert_eq!(stats.reward_std, STD_FLOOR);
        let norm = stats.normalize_batch(&two_point()).unwrap();
        assert!(norm.iter().all(|t| t.state[1] == 0.0 && t.action[0] == 0.0 && t.reward == 0.0));
    }

    #[test]
    fn empty_batch_is_rejected() {
        assert!(matches!(
            NormalizationStats::fit(&TransitionDataset::new(1, 1)),
            Err(Error::EmptyInput(_))
        ));
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(
            rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 6), 2..20)
        ) {
            let mut ds = TransitionDataset::new(2, 1);
            for r in &rows {
                ds.push(&r[0..2], &r[2..3], r[3], &r[4..6]).unwrap();
            }
            let stats = NormalizationStats::fit(&ds).unwrap();
            let back = stats.denormalize_batch(&stats.normalize_batch(&ds).unwrap()).unwrap();
            let pairs = ds.states().iter().zip(back.states())
                .chain(ds.actions().iter().zip(back.actions()))
                .chain(ds.rewards().iter().zip(back.rewards()))
                .chain(ds.next_states().iter().zip(back.next_states()));
            for (x, y) in pairs {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }
}
