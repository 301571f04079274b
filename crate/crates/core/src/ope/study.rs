use serde::{Deserialize, Serialize};

use super::metrics::{pearson_r, spearman_rho};
use super::mb_ope;
use crate::dynamics::TransitionModel;
use crate::envs::Policy;
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// One trained model entering the study.
pub struct StudyModel<'a> {
    pub id: String,
    pub validation_nll: f64,
    pub model: &'a dyn TransitionModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub model_id: String,
    pub policy_id: String,
    pub estimate: f64,
    pub stderr: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub model_id: String,
    pub validation_nll: f64,
    /// `None` when the model's estimates have zero variance.
    pub pearson_r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub rows: Vec<StudyRow>,
    pub cells: Vec<StudyCell>,
    /// Rank correlation between −validation NLL and Pearson r across
    /// models with a defined r.
    pub trend: Option<f64>,
}

/// Scores every `(model, policy)` pair by model-based OPE and correlates
/// each model's estimates with the true values. Every (model, policy) pair
/// uses the same rollout streams (common random numbers), so differences
/// between cells are not dominated by Monte-Carlo noise.
#[allow(clippy::too_many_arguments)]
pub fn nll_vs_ope_study(
    models: &[StudyModel<'_>],
    policies: &[(&str, &dyn Policy)],
    truths: &[f64],
    initial_states: &Matrix,
    n_rollouts: usize,
    gamma: f64,
    horizon: usize,
    seed: u64,
) -> Result<StudyResult> {
    if models.len() < 2 || policies.len() < 2 {
        return Err(Error::Config(format!(
            "study needs at least 2 models and 2 policies, got {} and {}",
            models.len(),
            policies.len()
        )));
    }
    if truths.len() != policies.len() {
        return Err(Error::InputShape(format!("{} true values for {} policies", truths.len(), policies.len())));
    }
    let mut cells = Vec::with_capacity(models.len() * policies.len());
    let mut rows = Vec::with_capacity(models.len());
    for sm in models {
        let mut estimates = Vec::with_capacity(policies.len());
        for (j, (pid, policy)) in policies.iter().enumerate() {
            let r = mb_ope(sm.model, *policy, initial_states, n_rollouts, gamma, horizon, seed)?;
            estimates.push(r.estimate);
            cells.push(StudyCell {
                model_id: sm.id.clone(),
                policy_id: pid.to_string(),
                estimate: r.estimate,
                stderr: r.stderr,
                truth: truths[j],
            });
        }
        let r = match pearson_r(&estimates, truths) {
            Ok(v) => Some(v),
            Err(Error::UndefinedCorrelation(_)) => None,
            Err(e) => return Err(e),
        };
        rows.push(StudyRow { model_id: sm.id.clone(), validation_nll: sm.validation_nll, pearson_r: r });
    }
    let (neg_nll, rs): (Vec<f64>, Vec<f64>) =
        rows.iter().filter_map(|r| r.pearson_r.map(|p| (-r.validation_nll, p))).unzip();
    let trend = if neg_nll.len() >= 2 && neg_nll.iter().all(|v| v.is_finite()) {
        spearman_rho(&neg_nll, &rs).ok()
    } else {
        None
    };
    Ok(StudyResult { rows, cells, trend })
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};

    use super::*;
    use crate::envs::{Environment, GaussianLinearPolicy, LinearGaussianEnv, TrueDynamics};
    use crate::rng;

    #[test]
    fn perfect_models_track_the_oracle() {
        let env = LinearGaussianEnv::random_stable(2, 1, 20, 12).unwrap();
        let pols: Vec<GaussianLinearPolicy> = [0.0, -0.3, 0.4, 0.8]
            .iter()
            .map(|g| {
                GaussianLinearPolicy::new(DMatrix::from_element(1, 2, *g), DVector::zeros(1), DVector::from_element(1, 0.2))
                    .unwrap()
            })
            .collect();
        let mut rng = rng::root(1);
        let starts: Vec<f64> = (0..500).flat_map(|_| env.reset(&mut rng)).collect();
        let starts = Matrix::from_vec(500, 2, starts);
        let mean = DVector::from_fn(2, |i, _| (0..500).map(|r| starts.get(r, i)).sum::<f64>() / 500.0);
        let cov = DMatrix::from_fn(2, 2, |i, j| {
            (0..500).map(|r| (starts.get(r, i) - mean[i]) * (starts.get(r, j) - mean[j])).sum::<f64>() / 500.0
        });
        let truths: Vec<f64> = pols.iter().map(|p| env.analytic_value_from(p, 0.95, 20, &mean, &cov).unwrap()).collect();
        let named: Vec<(&str, &dyn Policy)> =
            pols.iter().enumerate().map(|(i, p)| (["a", "b", "c", "d"][i], p as &dyn Policy)).collect();
        let model = TrueDynamics(&env);
        let models = [
            StudyModel { id: "m0".into(), validation_nll: 1.0, model: &model },
            StudyModel { id: "m1".into(), validation_nll: 2.0, model: &model },
        ];
        let res = nll_vs_ope_study(&models, &named, &truths, &starts, 2000, 0.95, 20, 3).unwrap();
        assert_eq!(res.rows.len(), 2);
        assert_eq!(res.cells.len(), 8);
        for row in &res.rows {
            assert!(row.pearson_r.unwrap() > 0.99);
        }
        for c in &res.cells {
            assert!((c.estimate - c.truth).abs() < 3.0 * c.stderr, "{c:?}");
        }
    }

    #[test]
    fn needs_two_models() {
        let env = LinearGaussianEnv::random_stable(1, 1, 5, 1).unwrap();
        let p = GaussianLinearPolicy::new(DMatrix::zeros(1, 1), DVector::zeros(1), DVector::zeros(1)).unwrap();
        let model = TrueDynamics(&env);
        let one = [StudyModel { id: "m".into(), validation_nll: 0.0, model: &model }];
        let pols: [(&str, &dyn Policy); 2] = [("a", &p), ("b", &p)];
        let r = nll_vs_ope_study(&one, &pols, &[0.0, 1.0], &Matrix::zeros(1, 1), 10, 0.9, 5, 0);
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
