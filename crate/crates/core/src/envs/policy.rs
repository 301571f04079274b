use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// A stochastic policy `π(a | s)`.
pub trait Policy: Send + Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn sample(&self, state: &[f64], rng: &mut Stream) -> Vec<f64>;
    fn log_density(&self, state: &[f64], action: &[f64]) -> f64;
}

/// `a = K s + k + diag(σ_a) ε`, `ε ~ N(0, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLinearPolicy {
    pub gain: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub noise_std: DVector<f64>,
}

impl GaussianLinearPolicy {
    pub fn new(gain: DMatrix<f64>, bias: DVector<f64>, noise_std: DVector<f64>) -> Result<Self> {
        let m = gain.nrows();
        if bias.len() != m || noise_std.len() != m {
            return Err(Error::InputShape(format!(
                "policy gain has {m} rows but bias has {} and noise {} entries",
                bias.len(),
                noise_std.len()
            )));
        }
        if noise_std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) || gain.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericInput("policy parameters must be finite, noise >= 0".into()));
        }
        Ok(GaussianLinearPolicy { gain, bias, noise_std })
    }

    pub fn mean(&self, state: &[f64]) -> Vec<f64> {
        (0..self.gain.nrows())
            .map(|i| self.bias[i] + (0..self.gain.ncols()).map(|j| self.gain[(i, j)] * state[j]).sum::<f64>())
            .collect()
    }
}

impl Policy for GaussianLinearPolicy {
    fn state_dim(&self) -> usize {
        self.gain.ncols()
    }

    fn action_dim(&self) -> usize {
        self.gain.nrows()
    }

    fn sample(&self, state: &[f64], rng: &mut Stream) -> Vec<f64> {
        let mut a = self.mean(state);
        for (ai, sd) in a.iter_mut().zip(self.noise_std.iter()) {
            *ai += sd * rng::standard_normal(rng);
        }
        a
    }

    /// Point-mass dimensions (zero noise) contribute 0 on the mean and −∞
    /// elsewhere.
    fn log_density(&self, state: &[f64], action: &[f64]) -> f64 {
        let mean = self.mean(state);
        let mut total = 0.0;
        for ((a, mu), sd) in action.iter().zip(&mean).zip(self.noise_std.iter()) {
            if *sd == 0.0 {
                if a != mu {
                    return f64::NEG_INFINITY;
                }
                continue;
            }
            let z = (a - mu) / sd;
            total += -0.5 * z * z - sd.ln() - crate::dynamics::HALF_LN_2PI;
        }
        total
    }
}

/// Named policies with the quality knob each was generated from.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySet {
    pub names: Vec<String>,
    pub policies: Vec<GaussianLinearPolicy>,
    /// Interpolation weight towards a random gain: 0 is the regulator.
    pub mix: Vec<f64>,
}

impl PolicySet {
    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn get(&self, i: usize) -> &GaussianLinearPolicy {
        &self.policies[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_density_integrates_to_one() {
        for sd in [0.05, 0.3, 2.0] {
            let p = GaussianLinearPolicy::new(
                DMatrix::from_row_slice(1, 2, &[0.5, -1.0]),
                DVector::from_element(1, 0.2),
                DVector::from_element(1, sd),
            )
            .unwrap();
            let s = [0.3, 0.7];
            let mu = p.mean(&s)[0];
            let (lo, hi, steps) = (mu - 12.0 * sd, mu + 12.0 * sd, 20_000);
            let h = (hi - lo) / steps as f64;
            let integral: f64 = (0..steps).map(|i| (p.log_density(&s, &[lo + (i as f64 + 0.5) * h])).exp() * h).sum();
            assert!((integral - 1.0).abs() < 0.01, "sd {sd}: {integral}");
        }
    }

    #[test]
    fn own_samples_have_finite_density() {
        let p = GaussianLinearPolicy::new(
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            DVector::zeros(2),
            DVector::from_vec(vec![0.1, 0.0]),
        )
        .unwrap();
        let mut rng = rng::root(1);
        for _ in 0..100 {
            let a = p.sample(&[0.4], &mut rng);
            assert!(p.log_density(&[0.4], &a).is_finite());
            assert_eq!(a[1], 0.0);
        }
    }

    #[test]
    fn sample_moments() {
        let p = GaussianLinearPolicy::new(
            DMatrix::from_row_slice(1, 1, &[2.0]),
            DVector::from_element(1, -1.0),
            DVector::from_element(1, 0.5),
        )
        .unwrap();
        let mut rng = rng::root(4);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| p.sample(&[1.0], &mut rng)[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 1.0).abs() < 3.0 * 0.5 / (n as f64).sqrt());
        assert!((var - 0.25).abs() < 0.01);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let r = GaussianLinearPolicy::new(DMatrix::zeros(2, 3), DVector::zeros(1), DVector::zeros(2));
        assert!(matches!(r, Err(Error::InputShape(_))));
    }
}
