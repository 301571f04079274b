use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::TransitionDataset;
use crate::dynamics::{nll_and_output_grad, DynamicsModel, ModelKind, NormalizationStats};
use crate::error::{Error, Result};
use crate::nn::{mlp_backward, mlp_forward, optimizer_step, LrSchedule, OptimizerKind, OptimizerState};
use crate::rng::{self, Stream};

use super::evaluate_nll;

/// One training run's hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model_kind: ModelKind,
    /// Number of hidden layers.
    pub layers: usize,
    /// Width of every hidden layer.
    pub width: usize,
    /// Std of Gaussian noise added to normalized state/action inputs.
    pub input_noise_sigma: f64,
    pub weight_decay: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Autoregressive generation order; `None` is column order.
    #[serde(default)]
    pub dimension_order: Option<Vec<usize>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model_kind: ModelKind::Feedforward,
            layers: 3,
            width: 512,
            input_noise_sigma: 0.0,
            weight_decay: 0.0,
            learning_rate: 1e-3,
            epochs: 500,
            batch_size: 256,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            dimension_order: None,
        }
    }
}

pub const GRID_LAYERS: [usize; 2] = [3, 4];
pub const GRID_WIDTHS: [usize; 2] = [512, 1024];
pub const GRID_INPUT_NOISE: [f64; 3] = [0.0, 1e-6, 1e-7];
pub const GRID_WEIGHT_DECAY: [f64; 2] = [0.0, 1e-6];
pub const GRID_LEARNING_RATES: [f64; 2] = [1e-3, 3e-4];

impl TrainConfig {
    pub fn hidden(&self) -> Vec<usize> {
        vec![self.width; self.layers]
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        for (name, v) in [
            ("input noise", self.input_noise_sigma),
            ("weight decay", self.weight_decay),
            ("learning rate", self.learning_rate),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Checks that every grid field takes one of the sweep-grid values.
    pub fn validate_on_grid(&self) -> Result<()> {
        let ok = GRID_LAYERS.contains(&self.layers)
            && GRID_WIDTHS.contains(&self.width)
            && GRID_INPUT_NOISE.contains(&self.input_noise_sigma)
            && GRID_WEIGHT_DECAY.contains(&self.weight_decay)
            && GRID_LEARNING_RATES.contains(&self.learning_rate);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("configuration {} is off the sweep grid", self.key())))
        }
    }

    /// Canonical description of the hyperparameters, seed excluded.
    pub fn key(&self) -> String {
        let order = match &self.dimension_order {
            Some(o) => format!(
                ",order={}",
                o.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("-")
            ),
            None => String::new(),
        };
        format!(
            "kind={},layers={},width={},noise={:e},wd={:e},lr={:e},epochs={},batch={},opt={}{}",
            self.model_kind,
            self.layers,
            self.width,
            self.input_noise_sigma,
            self.weight_decay,
            self.learning_rate,
            self.epochs,
            self.batch_size,
            self.optimizer.as_str(),
            order
        )
    }
}

/// Learning curves and selection outcome of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean minibatch loss of each epoch (raw-unit NLL per transition).
    pub train_nll: Vec<f64>,
    /// Validation NLL; entry 0 is the untrained model, entry `e` follows
    /// epoch `e`.
    pub validation_nll: Vec<f64>,
    /// Index into `validation_nll` of the returned parameters.
    pub best_epoch: usize,
    pub best_validation_nll: f64,
    pub wall_clock_seconds: f64,
    pub steps: u64,
}

/// Mutable state of one training run.
pub struct Trainer {
    model: DynamicsModel,
    optimizer: OptimizerState,
    schedule: Option<LrSchedule>,
    config: TrainConfig,
    step: u64,
    noise_rng: Stream,
}

impl Trainer {
    /// Initializes a model for `config` with normalization fitted on `train`.
    pub fn new(config: &TrainConfig, train: &TransitionDataset) -> Result<Self> {
        config.validate()?;
        let mut model = DynamicsModel::new(
            config.model_kind,
            train.state_dim(),
            train.action_dim(),
            config.hidden(),
            rng::derive_seed(config.seed, 1),
        )?;
        if let (Some(order), DynamicsModel::Autoregressive(ar)) = (&config.dimension_order, &model) {
            model = DynamicsModel::Autoregressive(ar.clone().with_order(order.clone())?);
        }
        model.set_stats(NormalizationStats::fit(train)?)?;
        let optimizer = OptimizerState::new(config.optimizer, model.params().len());
        Ok(Trainer {
            model,
            optimizer,
            schedule: None,
            config: config.clone(),
            step: 0,
            noise_rng: rng::stream(config.seed, 2),
        })
    }

    pub fn with_schedule(mut self, schedule: LrSchedule) -> Self {
        self.schedule = Some(schedule);
        self
    }

    pub fn model(&self) -> &DynamicsModel {
        &self.model
    }

    pub fn into_model(self) -> DynamicsModel {
        self.model
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        match &self.schedule {
            Some(s) => s.lr_at(self.step),
            None => self.config.learning_rate,
        }
    }

    /// One minibatch update. Returns the batch loss (mean raw-unit NLL per
    /// transition) measured before the update.
    pub fn step(&mut self, batch: &TransitionDataset) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("empty minibatch".into()));
        }
        let sigma = self.config.input_noise_sigma;
        let design = self.model.design(batch, Some((sigma, &mut self.noise_rng)))?;
        let spec = self.model.spec().clone();
        let (outputs, cache) = mlp_forward(&spec, self.model.params(), &design.inputs)?;
        let scale = 1.0 / design.transitions as f64;
        let (total, out_grad) = nll_and_output_grad(&outputs, &design.targets, scale);
        let loss = total * scale + self.model.stats().target_log_jacobian();
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("non-finite loss at step {}", self.step)));
        }
        let grads = mlp_backward(&spec, self.model.params(), &cache, &out_grad)?;
        let lr = self.current_lr();
        optimizer_step(
            self.model.params_mut(),
            &grads,
            &mut self.optimizer,
            lr,
            self.config.weight_decay,
        )
        .map_err(|e| Error::Divergence(format!("step {}: {e}", self.step)))?;
        self.step += 1;
        Ok(loss)
    }
}

/// Minibatch maximum-likelihood training with linear LR decay to zero and
/// per-epoch validation; returns the parameters with the lowest validation
/// NLL seen (the untrained model included).
pub fn train_model(
    config: &TrainConfig,
    train: &TransitionDataset,
    validation: &TransitionDataset,
) -> Result<(DynamicsModel, TrainReport)> {
    let started = Instant::now();
    if train.is_empty() || validation.is_empty() {
        return Err(Error::EmptyInput("training and validation splits must be non-empty".into()));
    }
    if train.state_dim() != validation.state_dim() || train.action_dim() != validation.action_dim() {
        return Err(Error::InputShape("train and validation splits have different dims".into()));
    }
    let batches_per_epoch = train.len().div_ceil(config.batch_size.max(1));
    let total_steps = (config.epochs * batches_per_epoch) as u64;
    let mut trainer = Trainer::new(config, train)?;
    if total_steps > 0 {
        trainer = trainer.with_schedule(LrSchedule::new(config.learning_rate, total_steps)?);
    }

    let initial = evaluate_nll(trainer.model(), validation)?.total;
    let mut validation_nll = vec![initial];
    let mut train_nll = Vec::with_capacity(config.epochs);
    let mut best = (0usize, initial, trainer.model().params().clone());
    let mut shuffle_rng = rng::stream(config.seed, 3);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = train.subset(chunk);
            let loss = trainer.step(&batch).map_err(|e| match e {
                Error::Divergence(msg) => Error::Divergence(format!("epoch {epoch}, batch {b}: {msg}")),
                other => other,
            })?;
            sum += loss * chunk.len() as f64;
        }
        train_nll.push(sum / train.len() as f64);
        let val = evaluate_nll(trainer.model(), validation)?.total;
        if !val.is_finite() {
            return Err(Error::Divergence(format!("epoch {epoch}: validation NLL is {val}")));
        }
        validation_nll.push(val);
        if val < best.1 {
            best = (epoch, val, trainer.model().params().clone());
        }
    }

    let steps = trainer.steps_taken();
    let mut model = trainer.into_model();
    model.params_mut().as_mut_slice().copy_from_slice(best.2.as_slice());
    let report = TrainReport {
        train_nll,
        validation_nll,
        best_epoch: best.0,
        best_validation_nll: best.1,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        steps,
    };
    Ok((model, report))
}
