use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

fn check_pair(estimates: &[f64], truths: &[f64], min_len: usize) -> Result<()> {
    if estimates.len() != truths.len() {
        return Err(Error::InputShape(format!(
            "{} estimates but {} true values",
            estimates.len(),
            truths.len()
        )));
    }
    if estimates.len() < min_len {
        return Err(Error::InputShape(format!("need at least {min_len} pairs, got {}", estimates.len())));
    }
    if estimates.iter().chain(truths).any(|v| !v.is_finite()) {
        return Err(Error::NumericInput("metric inputs must be finite".into()));
    }
    Ok(())
}

/// 1-based ranks, ties sharing the average of the ranks they span.
pub(crate) fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("one side has zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
pub fn spearman_rho(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    check_pair(estimates, truths, 2)?;
    // Doubled, centered average ranks are integers, so every sum below is
    // exact and the result does not depend on summation order.
    let n1 = (estimates.len() + 1) as f64;
    let centered = |v: &[f64]| average_ranks(v).into_iter().map(|r| 2.0 * r - n1).collect::<Vec<f64>>();
    let (x, y) = (centered(estimates), centered(truths));
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("all values tied".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn pearson_r(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    check_pair(estimates, truths, 2)?;
    correlation(estimates, truths)
}

/// Mean absolute deviation of the estimates from the true values.
pub fn absolute_error(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    check_pair(estimates, truths, 1)?;
    Ok(estimates.iter().zip(truths).map(|(e, t)| (e - t).abs()).sum::<f64>() / estimates.len() as f64)
}

/// `(raw, normalized)` regret of picking the best true value among the `k`
/// highest estimates; ties in the estimates go to the lower index.
/// Normalized by the true value range, with `0 / 0 = 0`.
pub fn regret_at_k(estimates: &[f64], truths: &[f64], k: usize) -> Result<(f64, f64)> {
    check_pair(estimates, truths, 1)?;
    if k == 0 || k > estimates.len() {
        return Err(Error::Config(format!("k = {k} outside 1..={}", estimates.len())));
    }
    let mut order: Vec<usize> = (0..estimates.len()).collect();
    order.sort_by(|&a, &b| estimates[b].total_cmp(&estimates[a]).then(a.cmp(&b)));
    let best = truths.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let worst = truths.iter().cloned().fold(f64::INFINITY, f64::min);
    let picked = order[..k].iter().map(|&i| truths[i]).fold(f64::NEG_INFINITY, f64::max);
    let raw = best - picked;
    let range = best - worst;
    let normalized = if range == 0.0 { 0.0 } else { raw / range };
    Ok((raw, normalized))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub mean: f64,
    /// Sample standard deviation over the used resamples.
    pub std: f64,
    pub used: usize,
    /// Resamples on which the metric was undefined (e.g. all ties).
    pub skipped: usize,
}

/// Resamples `(estimate, truth)` pairs with replacement `b` times and
/// summarizes the metric over the resamples where it is defined.
pub fn bootstrap_metric<F>(metric: F, estimates: &[f64], truths: &[f64], b: usize, seed: u64) -> Result<BootstrapSummary>
where
    F: Fn(&[f64], &[f64]) -> Result<f64>,
{
    if b < 2 {
        return Err(Error::Config(format!("bootstrap needs at least 2 resamples, got {b}")));
    }
    check_pair(estimates, truths, 1)?;
    let len = estimates.len();
    let mut rng = rng::root(seed);
    let mut values = Vec::with_capacity(b);
    let mut skipped = 0;
    let (mut es, mut ts) = (vec![0.0; len], vec![0.0; len]);
    for _ in 0..b {
        for j in 0..len {
            let i = rng.random_range(0..len);
            es[j] = estimates[i];
            ts[j] = truths[i];
        }
        match metric(&es, &ts) {
            Ok(v) => values.push(v),
            Err(Error::UndefinedCorrelation(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if values.is_empty() {
        return Err(Error::DegenerateBootstrap(skipped));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(BootstrapSummary { mean, std, used: values.len(), skipped })
}

/// A metric on the full data plus its bootstrap summary; `None` where the
/// metric is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub name: String,
    pub value: Option<f64>,
    pub bootstrap: Option<BootstrapSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub metrics: Vec<MetricValue>,
}

impl MetricsReport {
    pub fn get(&self, name: &str) -> Option<&MetricValue> {
        self.metrics.iter().find(|m| m.name == name)
    }
}

/// Rank correlation, Pearson r, mean absolute error, raw and normalized
/// regret@k, each with a `b`-resample bootstrap.
pub fn metrics_report(estimates: &[f64], truths: &[f64], k: usize, b: usize, seed: u64) -> Result<MetricsReport> {
    check_pair(estimates, truths, 2)?;
    let k = k.min(estimates.len());
    type Metric<'a> = Box<dyn Fn(&[f64], &[f64]) -> Result<f64> + 'a>;
    let entries: Vec<(&str, Metric)> = vec![
        ("spearman_rho", Box::new(spearman_rho)),
        ("pearson_r", Box::new(pearson_r)),
        ("absolute_error", Box::new(absolute_error)),
        ("regret_at_k", Box::new(move |e: &[f64], t: &[f64]| regret_at_k(e, t, k).map(|r| r.0))),
        ("normalized_regret_at_k", Box::new(move |e: &[f64], t: &[f64]| regret_at_k(e, t, k).map(|r| r.1))),
    ];
    let mut metrics = Vec::new();
    for (i, (name, f)) in entries.iter().enumerate() {
        let value = match f(estimates, truths) {
            Ok(v) => Some(v),
            Err(Error::UndefinedCorrelation(_)) => None,
            Err(e) => return Err(e),
        };
        let bootstrap = match bootstrap_metric(f, estimates, truths, b, rng::derive_seed(seed, i as u64)) {
            Ok(s) => Some(s),
            Err(Error::DegenerateBootstrap(_)) => None,
            Err(e) => return Err(e),
        };
        metrics.push(MetricValue { name: name.to_string(), value, bootstrap });
    }
    Ok(MetricsReport { k, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_cases() {
        assert_eq!(spearman_rho(&[1.0, 2.0, 3.0], &[4.0, 5.0, 9.0]).unwrap(), 1.0);
        assert_eq!(spearman_rho(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_eq!(spearman_rho(&[3.0, 1.0, 2.0], &[30.0, 10.0, 20.0]).unwrap(), 1.0);
        assert!(matches!(spearman_rho(&[1.0, 2.0], &[1.0]), Err(Error::InputShape(_))));
        assert!(matches!(spearman_rho(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn average_ranks_of_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn pearson_cases() {
        let x = [0.5, 1.0, 4.0, -2.0];
        let affine: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let flipped: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_r(&x, &affine).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson_r(&x, &flipped).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pearson_r(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn absolute_error_cases() {
        assert_eq!(absolute_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(absolute_error(&[0.0], &[3.0]).unwrap(), 3.0);
        assert_eq!(absolute_error(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 1.5);
    }

    #[test]
    fn regret_cases() {
        let t = [10.0, 0.0, 5.0];
        assert_eq!(regret_at_k(&[0.0, 10.0, 5.0], &t, 1).unwrap(), (10.0, 1.0));
        assert_eq!(regret_at_k(&[0.0, 10.0, 5.0], &t, 3).unwrap().0, 0.0);
        assert_eq!(regret_at_k(&[9.0, 1.0, 2.0], &t, 1).unwrap().0, 0.0);
        assert_eq!(regret_at_k(&[1.0, 2.0], &[4.0, 4.0], 1).unwrap(), (0.0, 0.0));
        assert!(matches!(regret_at_k(&t, &t, 0), Err(Error::Config(_))));
        assert!(matches!(regret_at_k(&t, &t, 4), Err(Error::Config(_))));
    }

    #[test]
    fn bootstrap_constant_and_deterministic() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let s = bootstrap_metric(absolute_error, &x, &x, 50, 1).unwrap();
        assert_eq!((s.mean, s.std), (0.0, 0.0));
        let y = [1.5, 1.0, 3.5, 4.5];
        assert_eq!(
            bootstrap_metric(spearman_rho, &x, &y, 100, 9).unwrap(),
            bootstrap_metric(spearman_rho, &x, &y, 100, 9).unwrap()
        );
        assert!(matches!(
            bootstrap_metric(spearman_rho, &[1.0, 1.0], &[2.0, 2.0], 10, 0),
            Err(Error::DegenerateBootstrap(10))
        ));
        assert!(bootstrap_metric(absolute_error, &x, &x, 1, 0).is_err());
    }

    #[test]
    fn report_has_every_metric() {
        let r = metrics_report(&[1.0, 3.0, 2.0, 5.0], &[2.0, 3.0, 1.0, 4.0], 5, 200, 0).unwrap();
        assert_eq!(r.k, 4);
        let names: Vec<&str> = r.metrics.iter().map(|m| m.name.as_str()).collect();
        assert_eq!(names, ["spearman_rho", "pearson_r", "absolute_error", "regret_at_k", "normalized_regret_at_k"]);
        for m in &r.metrics {
            assert!(m.value.is_some() && m.bootstrap.is_some());
        }
    }
}
