use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trainer::{
    train_model, TrainConfig, TrainReport, GRID_INPUT_NOISE, GRID_LAYERS, GRID_LEARNING_RATES, GRID_WEIGHT_DECAY,
    GRID_WIDTHS,
};
use super::split::split_dataset;
use crate::data::TransitionDataset;
use crate::dynamics::{DynamicsModel, ModelKind};
use crate::error::{Error, Result};
use crate::nn::OptimizerKind;
use crate::rng;

/// Cartesian product of per-field value lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub model_kinds: Vec<ModelKind>,
    pub layers: Vec<usize>,
    pub widths: Vec<usize>,
    pub input_noise_sigmas: Vec<f64>,
    pub weight_decays: Vec<f64>,
    pub learning_rates: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// When set, every generated config must lie on the reference grid.
    pub restrict_to_reference_grid: bool,
}

impl SweepGrid {
    /// The full reference grid (48 combinations per family).
    pub fn reference(model_kinds: Vec<ModelKind>) -> Self {
        SweepGrid {
            model_kinds,
            layers: GRID_LAYERS.to_vec(),
            widths: GRID_WIDTHS.to_vec(),
            input_noise_sigmas: GRID_INPUT_NOISE.to_vec(),
            weight_decays: GRID_WEIGHT_DECAY.to_vec(),
            learning_rates: GRID_LEARNING_RATES.to_vec(),
            epochs: 500,
            batch_size: 256,
            optimizer: OptimizerKind::Adam,
            restrict_to_reference_grid: true,
        }
    }

    /// A grid with one value per field, taken from `config`.
    pub fn single(config: &TrainConfig) -> Self {
        SweepGrid {
            model_kinds: vec![config.model_kind],
            layers: vec![config.layers],
            widths: vec![config.width],
            input_noise_sigmas: vec![config.input_noise_sigma],
            weight_decays: vec![config.weight_decay],
            learning_rates: vec![config.learning_rate],
            epochs: config.epochs,
            batch_size: config.batch_size,
            optimizer: config.optimizer,
            restrict_to_reference_grid: false,
        }
    }

    pub fn len(&self) -> usize {
        self.model_kinds.len()
            * self.layers.len()
            * self.widths.len()
            * self.input_noise_sigmas.len()
            * self.weight_decays.len()
            * self.learning_rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every combination, family-major, in a fixed order. Seeds are filled in
    /// by the sweep.
    pub fn configs(&self) -> Result<Vec<TrainConfig>> {
        let mut out = Vec::with_capacity(self.len());
        for &model_kind in &self.model_kinds {
            for &layers in &self.layers {
                for &width in &self.widths {
                    for &input_noise_sigma in &self.input_noise_sigmas {
                        for &weight_decay in &self.weight_decays {
                            for &learning_rate in &self.learning_rates {
                                let cfg = TrainConfig {
                                    model_kind,
                                    layers,
                                    width,
                                    input_noise_sigma,
                                    weight_decay,
                                    learning_rate,
                                    epochs: self.epochs,
                                    batch_size: self.batch_size,
                                    optimizer: self.optimizer,
                                    seed: 0,
                                    dimension_order: None,
                                };
                                cfg.validate()?;
                                if self.restrict_to_reference_grid {
                                    cfg.validate_on_grid()?;
                                }
                                out.push(cfg);
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub enum SweepOutcome {
    Trained { model: DynamicsModel, report: TrainReport },
    Diverged { message: String },
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub config: TrainConfig,
    pub outcome: SweepOutcome,
}

impl SweepRun {
    pub fn validation_nll(&self) -> Option<f64> {
        match &self.outcome {
            SweepOutcome::Trained { report, .. } => Some(report.best_validation_nll),
            SweepOutcome::Diverged { .. } => None,
        }
    }

    pub fn model(&self) -> Option<&DynamicsModel> {
        match &self.outcome {
            SweepOutcome::Trained { model, .. } => Some(model),
            SweepOutcome::Diverged { .. } => None,
        }
    }
}

/// Best and best-five-mean validation NLL of one model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub model_kind: ModelKind,
    pub top1: f64,
    /// Mean over the best `min(5, completed)` runs.
    pub top5_mean: f64,
    pub completed: usize,
    pub diverged: usize,
}

/// Outcome of a sweep: every run, and the converged ones ranked.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub runs: Vec<SweepRun>,
    /// Indices into `runs`, ascending validation NLL; diverged runs absent.
    pub ranking: Vec<usize>,
}

impl SweepResult {
    pub fn ranked(&self) -> impl Iterator<Item = &SweepRun> + '_ {
        self.ranking.iter().map(|&i| &self.runs[i])
    }

    /// Best converged run of `kind`.
    pub fn best(&self, kind: ModelKind) -> Option<&SweepRun> {
        self.ranked().find(|r| r.config.model_kind == kind)
    }

    /// One row per family present in the grid, in grid order.
    pub fn summaries(&self) -> Vec<SweepSummary> {
        let mut kinds: Vec<ModelKind> = Vec::new();
        for r in &self.runs {
            if !kinds.contains(&r.config.model_kind) {
                kinds.push(r.config.model_kind);
            }
        }
        kinds
            .into_iter()
            .filter_map(|kind| {
                let nlls: Vec<f64> =
                    self.ranked().filter(|r| r.config.model_kind == kind).filter_map(|r| r.validation_nll()).collect();
                let diverged = self
                    .runs
                    .iter()
                    .filter(|r| r.config.model_kind == kind && r.validation_nll().is_none())
                    .count();
                let top = &nlls[..nlls.len().min(5)];
                (!top.is_empty()).then(|| SweepSummary {
                    model_kind: kind,
                    top1: top[0],
                    top5_mean: top.iter().sum::<f64>() / top.len() as f64,
                    completed: nlls.len(),
                    diverged,
                })
            })
            .collect()
    }
}

fn key_hash(key: &str) -> u64 {
    // FNV-1a: stable across platforms and releases, unlike `DefaultHasher`.
    key.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Trains every grid combination on one seeded 80/20 split. Each run's
/// seed depends only on the sweep seed and the run's hyperparameters, so
/// results do not depend on thread scheduling.
pub fn hyperparameter_sweep(grid: &SweepGrid, dataset: &TransitionDataset, seed: u64) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let (train, validation) = split_dataset(dataset, 0.8, seed)?;
    let configs: Vec<TrainConfig> = grid
        .configs()?
        .into_iter()
        .map(|mut c| {
            c.seed = rng::derive_seed(seed, key_hash(&c.key()));
            c
        })
        .collect();

    let runs: Vec<SweepRun> = configs
        .into_par_iter()
        .map(|config| {
            let outcome = match train_model(&config, &train, &validation) {
                Ok((model, report)) => Ok(SweepOutcome::Trained { model, report }),
                Err(Error::Divergence(message)) => Ok(SweepOutcome::Diverged { message }),
                Err(e) => Err(e),
            }?;
            Ok(SweepRun { config, outcome })
        })
        .collect::<Result<_>>()?;

    let mut ranking: Vec<usize> = (0..runs.len()).filter(|&i| runs[i].validation_nll().is_some()).collect();
    ranking.sort_by(|&a, &b| {
        let (x, y) = (runs[a].validation_nll().unwrap(), runs[b].validation_nll().unwrap());
        x.total_cmp(&y).then_with(|| runs[a].config.key().cmp(&runs[b].config.key()))
    });
    Ok(SweepResult { runs, ranking })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> TransitionDataset {
        let mut rng = rng::root(11);
        let mut ds = TransitionDataset::new(2, 1);
        for _ in 0..200 {
            let s = [rng::standard_normal(&mut rng), rng::standard_normal(&mut rng)];
            let a = [rng::standard_normal(&mut rng)];
            let next = [
                0.9 * s[0] + 0.2 * a[0] + 0.1 * rng::standard_normal(&mut rng),
                0.5 * s[1] + 0.1 * rng::standard_normal(&mut rng),
            ];
            ds.push(&s, &a, -s[0] * s[0], &next).unwrap();
        }
        ds
    }

    fn tiny(kinds: Vec<ModelKind>, lrs: Vec<f64>) -> SweepGrid {
        SweepGrid {
            model_kinds: kinds,
            layers: vec![1],
            widths: vec![8],
            input_noise_sigmas: vec![0.0],
            weight_decays: vec![0.0],
            learning_rates: lrs,
            epochs: 2,
            batch_size: 64,
            optimizer: OptimizerKind::Adam,
            restrict_to_reference_grid: false,
        }
    }

    #[test]
    fn reference_grid_has_48_per_family() {
        let grid = SweepGrid::reference(vec![ModelKind::Feedforward, ModelKind::Autoregressive]);
        let configs = grid.configs().unwrap();
        assert_eq!(configs.len(), 96);
        for kind in [ModelKind::Feedforward, ModelKind::Autoregressive] {
            assert_eq!(configs.iter().filter(|c| c.model_kind == kind).count(), 48);
        }
        let mut keys: Vec<String> = configs.iter().map(TrainConfig::key).collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), 96);
    }

    #[test]
    fn restricted_grid_rejects_off_grid_values() {
        let mut grid = SweepGrid::reference(vec![ModelKind::Feedforward]);
        grid.widths = vec![64];
        assert!(matches!(grid.configs(), Err(Error::Config(_))));
    }

    #[test]
    fn singleton_grid() {
        let res = hyperparameter_sweep(&tiny(vec![ModelKind::Feedforward], vec![1e-3]), &data(), 4).unwrap();
        assert_eq!(res.ranking, vec![0]);
        let s = &res.summaries()[0];
        assert_eq!(s.top1, res.runs[0].validation_nll().unwrap());
        assert_eq!(s.top1, s.top5_mean);
    }

    #[test]
    fn ranking_ascending_and_top5_bounds_top1() {
        let grid = tiny(vec![ModelKind::Feedforward, ModelKind::Autoregressive], vec![1e-2, 3e-3, 1e-3]);
        let res = hyperparameter_sweep(&grid, &data(), 5).unwrap();
        let nlls: Vec<f64> = res.ranked().map(|r| r.validation_nll().unwrap()).collect();
        assert!(nlls.windows(2).all(|w| w[0] <= w[1]));
        for s in res.summaries() {
            assert!(s.top5_mean >= s.top1);
            assert_eq!(s.completed, 3);
        }
    }

    #[test]
    fn sweep_is_deterministic_and_grid_growth_never_hurts() {
        let ds = data();
        let small = tiny(vec![ModelKind::Autoregressive], vec![1e-3]);
        let big = tiny(vec![ModelKind::Autoregressive], vec![1e-3, 1e-2]);
        let a = hyperparameter_sweep(&small, &ds, 8).unwrap();
        let b = hyperparameter_sweep(&small, &ds, 8).unwrap();
        assert_eq!(a.runs[0].model(), b.runs[0].model());
        let c = hyperparameter_sweep(&big, &ds, 8).unwrap();
        assert!(c.summaries()[0].top1 <= a.summaries()[0].top1);
    }

    #[test]
    fn divergent_runs_are_excluded() {
        let grid = tiny(vec![ModelKind::Feedforward], vec![1e-3, 1e12]);
        let res = hyperparameter_sweep(&grid, &data(), 2).unwrap();
        let diverged = res.runs.iter().filter(|r| r.validation_nll().is_none()).count();
        assert_eq!(res.ranking.len() + diverged, 2);
        assert_eq!(res.summaries()[0].diverged, diverged);
    }
}
