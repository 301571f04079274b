//! The `key = value` run configuration shared by every command.
//!
//! Every key has a default; a config file only lists what it changes.
//! Unknown keys are rejected. [`RunConfig::snapshot`] renders the fully
//! resolved configuration and [`RunConfig::digest`] is its SHA-256.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::dynamics::ModelKind;
use crate::envs::{
    make_policy_set, CorrelatedChainEnv, Environment, GaussianLinearPolicy, LinearGaussianEnv, PendulumEnv, PolicySet,
};
use crate::error::{Error, Result};
use crate::io::RealWidth;
use crate::nn::OptimizerKind;
use crate::planning::MppiConfig;
use crate::rng;
use crate::training::{SweepGrid, TrainConfig};

/// `(key, default, description)`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "master seed"),
    ("threads", "0", "worker threads; 0 = all cores, 1 = bit-exact serial path"),
    ("output_dir", "", "output directory; empty = $ARDM_OUTPUT_ROOT/<command>"),
    ("env.kind", "linear_gaussian", "linear_gaussian | correlated_chain | pendulum"),
    ("env.state_dim", "4", "state dimension of generated instances"),
    ("env.action_dim", "2", "action dimension of generated instances"),
    ("env.horizon", "200", "episode length"),
    ("env.instance_seed", "20240601", "seed of the generated linear instance"),
    ("env.rho", "0.9", "chain noise correlation"),
    ("env.sigma", "0.5", "chain noise scale"),
    ("env.reward_noise_std", "0", "zero-mean noise on emitted rewards"),
    ("env.a", "", "A, row-major; empty = generated"),
    ("env.b", "", "B, row-major; empty = generated"),
    ("env.noise_cov", "", "process noise covariance, row-major"),
    ("env.q", "", "state cost, row-major"),
    ("env.r", "", "action cost, row-major"),
    ("env.init_mean", "", "initial state mean"),
    ("env.init_cov", "", "initial state covariance, row-major"),
    ("policies.count", "10", "size of the evaluated policy set"),
    ("policies.spread", "1.0", "quality spread of the policy set in [0, 1]"),
    ("policies.seed", "1", "seed of the policy set"),
    ("data.transitions", "20000", "transitions to collect"),
    ("data.behavior_policy", "5", "index into the policy set used for collection"),
    ("data.real_width", "f64", "f64 | f32 dataset reals"),
    ("train.model_kind", "autoregressive", "feedforward | autoregressive"),
    ("train.layers", "3", "hidden layers"),
    ("train.width", "512", "hidden width"),
    ("train.input_noise_sigma", "0", "input noise std"),
    ("train.weight_decay", "0", "decoupled weight decay"),
    ("train.learning_rate", "1e-3", "initial learning rate"),
    ("train.epochs", "500", "epochs"),
    ("train.batch_size", "256", "minibatch size"),
    ("train.optimizer", "adam", "adam | sgd_momentum"),
    ("train.train_fraction", "0.8", "train side of the split"),
    ("sweep.model_kinds", "feedforward,autoregressive", "families in the sweep"),
    ("sweep.layers", "3,4", "hidden layer counts"),
    ("sweep.widths", "512,1024", "hidden widths"),
    ("sweep.input_noise_sigmas", "0,1e-6,1e-7", "input noise stds"),
    ("sweep.weight_decays", "0,1e-6", "weight decays"),
    ("sweep.learning_rates", "1e-3,3e-4", "learning rates"),
    ("sweep.reference_grid", "true", "restrict every grid field to the reference values"),
    ("ope.gamma", "0.995", "evaluation discount"),
    ("ope.rollouts", "100", "Monte-Carlo rollouts per estimate"),
    ("ope.horizon", "env", "rollout length; env = environment horizon"),
    ("ope.top_k", "5", "k of regret@k"),
    ("ope.bootstrap", "1000", "bootstrap resamples"),
    ("ope.truth_rollouts", "10000", "Monte-Carlo rollouts for ground truth without a closed form"),
    ("mppi.iterations", "3", "refinement iterations M"),
    ("mppi.candidates", "16", "candidate rollouts N"),
    ("mppi.horizon", "10", "planning horizon H"),
    ("mppi.beta", "0.1", "softmax temperature"),
    ("mppi.sigma_sq", "0.01", "resampling variance"),
    ("mppi.gamma", "0.995", "planning discount"),
    ("plan.episodes", "100", "paired evaluation episodes"),
    ("plan.episode_len", "env", "episode length; env = environment horizon"),
    ("plan.policy", "5", "index of the planned-over policy"),
    ("plan.critic", "analytic", "analytic | zero"),
    ("augment.ratio", "1.0", "synthetic-to-real ratio"),
    ("augment.policy", "behavior", "behavior | policy index"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { values: KEYS.iter().map(|(k, v, _)| (*k, v.to_string())).collect() }
    }
}

fn known(key: &str) -> Option<&'static str> {
    KEYS.iter().map(|(k, _, _)| *k).find(|k| *k == key)
}

impl RunConfig {
    /// Defaults overlaid with the assignments in `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
            let key = key.trim();
            if let Some(prev) = seen.insert(key.to_string(), no + 1) {
                return Err(Error::Config(format!("line {}: {key} already set on line {prev}", no + 1)));
            }
            cfg.set(key, value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", no + 1, strip_config(e))))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_config(e))))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = known(key).ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
        self.values.insert(k, value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("{key} is not a config key"))
    }

    fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse().map_err(|_| Error::Config(format!("{key} = {v:?} is not a valid value")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v: f64 = self.parse_value(key)?;
        if !v.is_finite() {
            return Err(Error::Config(format!("{key} must be finite")));
        }
        Ok(v)
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parse_value(key)
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.parse_value(key)
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        self.parse_value(key)
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let v = self.get(key).trim();
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|x| {
                x.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: {:?} is not a valid list entry", x.trim())))
            })
            .collect()
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let v: Vec<f64> = self.list(key)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config(format!("{key} must hold finite numbers")));
        }
        Ok(v)
    }

    /// `usize` value, or `fallback` when the key holds `env`.
    pub fn usize_or_env(&self, key: &str, fallback: usize) -> Result<usize> {
        if self.get(key) == "env" {
            Ok(fallback)
        } else {
            self.usize(key)
        }
    }

    /// Resolved configuration, one sorted `key = value` line per key.
    pub fn snapshot(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hex SHA-256 of [`Self::snapshot`].
    pub fn digest(&self) -> String {
        Sha256::digest(self.snapshot().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn matrix(&self, key: &str, rows: usize, cols: usize) -> Result<Option<DMatrix<f64>>> {
        let v = self.f64_list(key)?;
        if v.is_empty() {
            return Ok(None);
        }
        if v.len() != rows * cols {
            return Err(Error::Config(format!("{key} has {} entries, expected {rows}×{cols}", v.len())));
        }
        Ok(Some(DMatrix::from_row_slice(rows, cols, &v)))
    }

    pub fn environment(&self) -> Result<EnvSpec> {
        let horizon = self.usize("env.horizon")?;
        let reward_noise = self.f64("env.reward_noise_std")?;
        let (n, m) = (self.usize("env.state_dim")?, self.usize("env.action_dim")?);
        match self.get("env.kind") {
            "linear_gaussian" => {
                let generated = LinearGaussianEnv::random_stable(n, m, horizon, self.u64("env.instance_seed")?)?;
                let pick = |key: &str, rows, cols, default: &DMatrix<f64>| -> Result<DMatrix<f64>> {
                    Ok(self.matrix(key, rows, cols)?.unwrap_or_else(|| default.clone()))
                };
                let init_mean = match self.f64_list("env.init_mean")? {
                    v if v.is_empty() => generated.init_mean().clone(),
                    v if v.len() == n => DVector::from_vec(v),
                    v => return Err(Error::Config(format!("env.init_mean has {} entries, expected {n}", v.len()))),
                };
                let env = LinearGaussianEnv::new(
                    pick("env.a", n, n, generated.a())?,
                    pick("env.b", n, m, generated.b())?,
                    pick("env.noise_cov", n, n, generated.noise_cov())?,
                    pick("env.q", n, n, generated.q())?,
                    pick("env.r", m, m, generated.r())?,
                    init_mean,
                    pick("env.init_cov", n, n, generated.init_cov())?,
                    horizon,
                )?
                .with_reward_noise(reward_noise)?;
                Ok(EnvSpec::Linear(env))
            }
            "correlated_chain" => Ok(EnvSpec::Chain(
                CorrelatedChainEnv::new(n, m, self.f64("env.rho")?, self.f64("env.sigma")?, horizon)?
                    .with_reward_noise(reward_noise)?,
            )),
            "pendulum" => {
                if (n, m) != (2, 1) {
                    return Err(Error::Config("the pendulum has state_dim 2 and action_dim 1".into()));
                }
                Ok(EnvSpec::Pendulum(PendulumEnv { horizon, ..PendulumEnv::default() }))
            }
            other => Err(Error::Config(format!("unknown env.kind {other:?}"))),
        }
    }

    pub fn policy_set(&self, env: &EnvSpec) -> Result<PolicySet> {
        let count = self.usize("policies.count")?;
        let spread = self.f64("policies.spread")?;
        let seed = self.u64("policies.seed")?;
        match env.linear() {
            Some(lin) => make_policy_set(lin, count, spread, seed),
            None => pendulum_policy_set(count, spread, seed),
        }
    }

    pub fn real_width(&self) -> Result<RealWidth> {
        match self.get("data.real_width") {
            "f64" => Ok(RealWidth::F64),
            "f32" => Ok(RealWidth::F32),
            other => Err(Error::Config(format!("data.real_width must be f64 or f32, got {other:?}"))),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            model_kind: self.get("train.model_kind").parse::<ModelKind>()?,
            layers: self.usize("train.layers")?,
            width: self.usize("train.width")?,
            input_noise_sigma: self.f64("train.input_noise_sigma")?,
            weight_decay: self.f64("train.weight_decay")?,
            learning_rate: self.f64("train.learning_rate")?,
            epochs: self.usize("train.epochs")?,
            batch_size: self.usize("train.batch_size")?,
            optimizer: self.get("train.optimizer").parse::<OptimizerKind>()?,
            seed: self.u64("seed")?,
            dimension_order: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_fraction(&self) -> Result<f64> {
        self.f64("train.train_fraction")
    }

    pub fn sweep_grid(&self) -> Result<SweepGrid> {
        let grid = SweepGrid {
            model_kinds: self.list::<String>("sweep.model_kinds")?.iter().map(|k| k.parse()).collect::<Result<_>>()?,
            layers: self.list("sweep.layers")?,
            widths: self.list("sweep.widths")?,
            input_noise_sigmas: self.f64_list("sweep.input_noise_sigmas")?,
            weight_decays: self.f64_list("sweep.weight_decays")?,
            learning_rates: self.f64_list("sweep.learning_rates")?,
            epochs: self.usize("train.epochs")?,
            batch_size: self.usize("train.batch_size")?,
            optimizer: self.get("train.optimizer").parse()?,
            restrict_to_reference_grid: self.bool("sweep.reference_grid")?,
        };
        if grid.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        grid.configs()?;
        Ok(grid)
    }

    pub fn mppi(&self) -> Result<MppiConfig> {
        let cfg = MppiConfig {
            iterations: self.usize("mppi.iterations")?,
            candidates: self.usize("mppi.candidates")?,
            horizon: self.usize("mppi.horizon")?,
            beta: self.f64("mppi.beta")?,
            sigma_sq: self.f64("mppi.sigma_sq")?,
            gamma: self.f64("mppi.gamma")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn strip_config(e: Error) -> String {
    match e {
        Error::Config(msg) => msg,
        other => other.to_string(),
    }
}

/// A configured environment.
#[derive(Debug, Clone)]
pub enum EnvSpec {
    Linear(LinearGaussianEnv),
    Chain(CorrelatedChainEnv),
    Pendulum(PendulumEnv),
}

impl EnvSpec {
    pub fn as_env(&self) -> &dyn Environment {
        match self {
            EnvSpec::Linear(e) => e,
            EnvSpec::Chain(e) => e,
            EnvSpec::Pendulum(e) => e,
        }
    }

    /// The linear-Gaussian view, when there is one (closed-form oracles).
    pub fn linear(&self) -> Option<&LinearGaussianEnv> {
        match self {
            EnvSpec::Linear(e) => Some(e),
            EnvSpec::Chain(e) => Some(e.linear()),
            EnvSpec::Pendulum(_) => None,
        }
    }
}

/// Proportional-derivative torque policies for the pendulum, from a
/// stabilizing gain towards random gains.
fn pendulum_policy_set(count: usize, spread: f64, seed: u64) -> Result<PolicySet> {
    if count < 2 {
        return Err(Error::Config(format!("a policy set needs at least 2 policies, got {count}")));
    }
    let mut r = rng::root(seed);
    let mut policies = Vec::with_capacity(count);
    let mut mix = Vec::with_capacity(count);
    for i in 0..count {
        let alpha = spread * i as f64 / (count - 1) as f64;
        let gain = DMatrix::from_fn(1, 2, |_, j| {
            let good = if j == 0 { -3.0 } else { -1.0 };
            (1.0 - alpha) * good + alpha * rng::standard_normal(&mut r)
        });
        let noise = DVector::from_element(1, 0.1 + 0.2 * (i % 3) as f64);
        policies.push(GaussianLinearPolicy::new(gain, DVector::zeros(1), noise)?);
        mix.push(alpha);
    }
    Ok(PolicySet { names: (0..count).map(|i| format!("policy_{i:02}")).collect(), policies, mix })
}
