use std::f64::consts::PI;

use crate::nn::Matrix;

/// Bounds of the hard clamp applied to raw log-variance outputs.
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 5.0;

/// `0.5 * ln(2 pi)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Per-dimension Gaussian: means and (clamped) log-variances.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrediction {
    pub mean: Vec<f64>,
    pub log_variance: Vec<f64>,
}

impl GaussianPrediction {
    /// Builds a prediction from raw network outputs, clamping log-variances.
    pub fn from_raw(mean: Vec<f64>, raw_log_variance: Vec<f64>) -> Self {
        debug_assert_eq!(mean.len(), raw_log_variance.len());
        GaussianPrediction {
            mean,
            log_variance: raw_log_variance.into_iter().map(clamp_log_variance).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Differential entropy of the diagonal Gaussian (normalized units).
    pub fn entropy(&self) -> f64 {
        self.log_variance.iter().map(|l| gaussian_entropy(*l)).sum()
    }
}

#[inline]
pub fn clamp_log_variance(l: f64) -> f64 {
    l.clamp(LOG_VAR_MIN, LOG_VAR_MAX)
}

/// `-log N(x; mean, exp(log_var))`.
#[inline]
pub fn gaussian_nll(x: f64, mean: f64, log_var: f64) -> f64 {
    let d = x - mean;
    HALF_LN_2PI + 0.5 * log_var + 0.5 * d * d * (-log_var).exp()
}

/// Entropy of a scalar Gaussian with the given log-variance.
#[inline]
pub fn gaussian_entropy(log_var: f64) -> f64 {
    0.5 * (2.0 * PI * std::f64::consts::E).ln() + 0.5 * log_var
}

/// Summed Gaussian NLL of `targets` under network `outputs`, plus the
/// gradient of that sum with respect to the raw outputs.
///
/// Each output row holds `k` means followed by `k` raw log-variances, where
/// `k = targets.cols()`. The log-variance gradient is zero where the clamp
/// is active.
pub fn nll_and_output_grad(outputs: &Matrix, targets: &Matrix, scale: f64) -> (f64, Matrix) {
    let k = targets.cols();
    debug_assert_eq!(outputs.cols(), 2 * k);
    debug_assert_eq!(outputs.rows(), targets.rows());
    let mut grad = Matrix::zeros(outputs.rows(), outputs.cols());
    let mut total = 0.0;
    for r in 0..outputs.rows() {
        let out = outputs.row(r);
        let tgt = targets.row(r);
        let g = grad.row_mut(r);
        for j in 0..k {
            let mu = out[j];
            let raw = out[k + j];
            let l = clamp_log_variance(raw);
            let inv_var = (-l).exp();
            let d = tgt[j] - mu;
            total += HALF_LN_2PI + 0.5 * l + 0.5 * d * d * inv_var;
            g[j] = -d * inv_var * scale;
            g[k + j] = if (LOG_VAR_MIN..=LOG_VAR_MAX).contains(&raw) {
                (0.5 - 0.5 * d * d * inv_var) * scale
            } else {
                0.0
            };
        }
    }
    (total, grad)
}
