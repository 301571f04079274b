use serde::{Deserialize, Serialize};

use super::mlp::ParameterSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    SgdMomentum,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::SgdMomentum => "sgd_momentum",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd_momentum" | "sgd" => Ok(OptimizerKind::SgdMomentum),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Moment buffers and hyperparameters for one training run.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    /// Adam first moment, or the momentum buffer for SGD.
    first: Vec<f64>,
    /// Adam second moment; empty for SGD.
    second: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub momentum: f64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, num_params: usize) -> Self {
        OptimizerState {
            kind,
            first: vec![0.0; num_params],
            second: match kind {
                OptimizerKind::Adam => vec![0.0; num_params],
                OptimizerKind::SgdMomentum => Vec::new(),
            },
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            momentum: 0.9,
        }
    }

    pub fn adam(num_params: usize) -> Self {
        Self::new(OptimizerKind::Adam, num_params)
    }

    pub fn sgd_momentum(num_params: usize, momentum: f64) -> Self {
        let mut s = Self::new(OptimizerKind::SgdMomentum, num_params);
        s.momentum = momentum;
        s
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One update. Weight decay is decoupled: parameters are scaled by
/// `1 - lr * weight_decay` before the gradient step.
pub fn optimizer_step(
    params: &mut ParameterSet,
    grads: &[f64],
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.first.len() != n {
        return Err(Error::InputShape(format!(
            "optimizer buffers ({} grads, {} moments) do not match {} parameters",
            grads.len(),
            state.first.len(),
            n
        )));
    }
    if !(lr >= 0.0) {
        return Err(Error::Config(format!("learning rate {lr} must be >= 0")));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Divergence(format!(
            "non-finite gradient in layer {} (entry {i})",
            params.layer_of(i)
        )));
    }

    let values = params.as_mut_slice();
    if weight_decay != 0.0 {
        let shrink = 1.0 - lr * weight_decay;
        for p in values.iter_mut() {
            *p *= shrink;
        }
    }

    state.step += 1;
    match state.kind {
        OptimizerKind::Adam => {
            let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
            let t = state.step as i32;
            let c1 = 1.0 - b1.powi(t);
            let c2 = 1.0 - b2.powi(t);
            for ((p, g), (m, v)) in values
                .iter_mut()
                .zip(grads)
                .zip(state.first.iter_mut().zip(state.second.iter_mut()))
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        OptimizerKind::SgdMomentum => {
            let mu = state.momentum;
            for ((p, g), buf) in values.iter_mut().zip(grads).zip(state.first.iter_mut()) {
                *buf = mu * *buf + g;
                *p -= lr * *buf;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpSpec;

    fn scalar_params(v: f64) -> ParameterSet {
        // 1 -> 1 affine layer without hidden units: weight then bias.
        let spec = MlpSpec::new(1, vec![], 1).unwrap();
        ParameterSet::from_values(&spec, vec![v, 0.0]).unwrap()
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let spec = MlpSpec::new(3, vec![4], 2).unwrap();
        let mut params = ParameterSet::init(&spec, 5);
        let before = params.clone();
        for kind in [OptimizerKind::Adam, OptimizerKind::SgdMomentum] {
            let mut state = OptimizerState::new(kind, params.len());
            let zeros = vec![0.0; params.len()];
            for _ in 0..3 {
                optimizer_step(&mut params, &zeros, &mut state, 0.1, 0.0).unwrap();
            }
            assert_eq!(state.step_count(), 3);
        }
        assert_eq!(before.as_slice(), params.as_slice());
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut params = scalar_params(0.0);
        let mut state = OptimizerState::adam(2);
        optimizer_step(&mut params, &[1.0, 0.0], &mut state, 0.1, 0.0).unwrap();
        let expected = -0.1 * (1.0 / (1.0 + 1e-8));
        assert!((params.as_slice()[0] - expected).abs() < 1e-15);
        assert_eq!(params.as_slice()[1], 0.0);
    }

    #[test]
    fn sgd_momentum_two_step_recursion() {
        let (g, eta) = (0.7, 0.05);
        let mut params = scalar_params(1.0);
        let mut state = OptimizerState::sgd_momentum(2, 0.9);
        optimizer_step(&mut params, &[g, 0.0], &mut state, eta, 0.0).unwrap();
        optimizer_step(&mut params, &[g, 0.0], &mut state, eta, 0.0).unwrap();
        let displacement = 1.0 - params.as_slice()[0];
        assert!((displacement - eta * g * (1.0 + 1.9)).abs() < 1e-15);
    }

    #[test]
    fn decoupled_weight_decay_scales_before_step() {
        let mut params = scalar_params(2.0);
        let mut state = OptimizerState::sgd_momentum(2, 0.0);
        optimizer_step(&mut params, &[0.0, 0.0], &mut state, 0.5, 0.1).unwrap();
        assert!((params.as_slice()[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let spec = MlpSpec::new(2, vec![3], 1).unwrap();
        let mut params = ParameterSet::init(&spec, 1);
        let mut grads = vec![0.0; params.len()];
        let last = params.layers()[1].weights;
        grads[last] = f64::INFINITY;
        let mut state = OptimizerState::adam(params.len());
        let err = optimizer_step(&mut params, &grads, &mut state, 0.1, 0.0).unwrap_err();
        assert!(matches!(&err, Error::Divergence(m) if m.contains("layer 1")), "{err}");
        assert_eq!(state.step_count(), 0);
    }
}
