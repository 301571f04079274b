use std::fs;
use std::path::{Path, PathBuf};

use ardm::config::{EnvSpec, RunConfig};
use ardm::dynamics::{read_checkpoint, write_checkpoint, Checkpoint, DynamicsModel, TransitionModel};
use ardm::envs::{collect_dataset, GaussianLinearPolicy, Policy, PolicySet, TrueDynamics};
use ardm::io::{fmt_real, read_dataset, read_initial_states, write_dataset, write_initial_states, write_origin_flags, CsvTable};
use ardm::nn::Matrix;
use ardm::ope::{ensemble_mb_ope, mb_ope, metrics_report, nll_vs_ope_study, StudyModel};
use ardm::planning::{augment_dataset, evaluate_planner, Critic, LqCritic, ZeroCritic};
use ardm::rng::derive_seed;
use ardm::training::{hyperparameter_sweep, split_dataset, train_model, SweepOutcome};
use ardm::{Error, Result};
use nalgebra::{DMatrix, DVector};

pub const DATASET_FILE: &str = "dataset.ards";
pub const INITIAL_STATES_FILE: &str = "initial_states.ars0";
pub const MODEL_FILE: &str = "model.ardm";
pub const AUGMENTED_FILE: &str = "augmented.ards";
pub const ORIGIN_FILE: &str = "augmented.ardo";

// Salts for seeds derived from the master seed.
const SALT_TRUTH: u64 = 0x7472_7574;
const SALT_METRICS: u64 = 0x6d65_7472;

pub struct Context<'a> {
    pub cfg: &'a RunConfig,
    pub out: &'a Path,
    pub digest: &'a str,
}

impl Context<'_> {
    fn seed(&self) -> Result<u64> {
        self.cfg.u64("seed")
    }

    fn write(&self, table: &CsvTable, stem: &str) -> Result<()> {
        table.write(self.out, stem, self.digest)
    }
}

fn policy_at(set: &PolicySet, index: usize) -> Result<&GaussianLinearPolicy> {
    set.policies
        .get(index)
        .ok_or_else(|| Error::Config(format!("policy index {index} out of range (set has {})", set.len())))
}

fn load_model(path: &Path) -> Result<Checkpoint> {
    let ckpt = read_checkpoint(path)?;
    eprintln!("loaded {} model from {}", ckpt.model.kind(), path.display());
    Ok(ckpt)
}

fn load_initial_states(path: &Path) -> Result<Matrix> {
    let rows = read_initial_states(path)?;
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!("{} holds no initial states", path.display())));
    }
    Ok(Matrix::from_rows(&rows))
}

/// Mean and (population) covariance of a start-state set: the moments of
/// uniform sampling from it.
fn empirical_moments(s0: &Matrix) -> (DVector<f64>, DMatrix<f64>) {
    let (k, n) = (s0.rows(), s0.cols());
    let mut mean = DVector::zeros(n);
    for i in 0..k {
        mean += DVector::from_column_slice(s0.row(i));
    }
    mean /= k as f64;
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..k {
        let d = DVector::from_column_slice(s0.row(i)) - &mean;
        cov += &d * d.transpose();
    }
    (mean, cov / k as f64)
}

/// Ground-truth values from the start set: closed form for linear
/// instances, high-count Monte Carlo on the true dynamics otherwise.
fn true_values(
    env: &EnvSpec,
    cfg: &RunConfig,
    policies: &[&GaussianLinearPolicy],
    s0: &Matrix,
    gamma: f64,
    horizon: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    match env.linear() {
        Some(lin) => {
            let (mean, cov) = empirical_moments(s0);
            policies.iter().map(|p| lin.analytic_value_from(p, gamma, horizon, &mean, &cov)).collect()
        }
        None => {
            let n = cfg.usize("ope.truth_rollouts")?;
            let truth = TrueDynamics(env.as_env());
            policies
                .iter()
                .enumerate()
                .map(|(j, p)| Ok(mb_ope(&truth, *p, s0, n, gamma, horizon, derive_seed(seed ^ SALT_TRUTH, j as u64))?.estimate))
                .collect()
        }
    }
}

pub fn gen_data(ctx: &Context) -> Result<()> {
    let env = ctx.cfg.environment()?;
    let set = ctx.cfg.policy_set(&env)?;
    let behavior = policy_at(&set, ctx.cfg.usize("data.behavior_policy")?)?;
    let width = ctx.cfg.real_width()?;
    let (data, starts) = collect_dataset(env.as_env(), behavior, ctx.cfg.usize("data.transitions")?, ctx.seed()?)?;
    write_dataset(&ctx.out.join(DATASET_FILE), &data, width)?;
    let rows: Vec<Vec<f64>> = (0..starts.rows()).map(|i| starts.row(i).to_vec()).collect();
    write_initial_states(&ctx.out.join(INITIAL_STATES_FILE), &rows, data.state_dim(), width)?;
    eprintln!("wrote {} transitions and {} initial states to {}", data.len(), rows.len(), ctx.out.display());
    Ok(())
}

pub fn train(ctx: &Context, data: &Path) -> Result<()> {
    let dataset = read_dataset(data)?;
    let config = ctx.cfg.train_config()?;
    let (train, validation) = split_dataset(&dataset, ctx.cfg.train_fraction()?, config.seed)?;
    let (model, report) = train_model(&config, &train, &validation)?;
    let ckpt = Checkpoint::new(model)
        .with_meta("validation_nll", fmt_real(report.best_validation_nll))
        .with_meta("best_epoch", report.best_epoch)
        .with_meta("config_key", config.key())
        .with_meta("config_digest", ctx.digest)
        .with_meta("seed", config.seed);
    write_checkpoint(&ctx.out.join(MODEL_FILE), &ckpt)?;

    let mut curve = CsvTable::new(["epoch", "train_nll", "validation_nll"]);
    for (e, v) in report.validation_nll.iter().enumerate() {
        let tr = if e == 0 { String::new() } else { fmt_real(report.train_nll[e - 1]) };
        curve.push(vec![e.to_string(), tr, fmt_real(*v)]);
    }
    ctx.write(&curve, "train")?;
    let mut timing = CsvTable::new(["run", "wall_clock_seconds", "steps"]);
    timing.push(vec!["0".into(), fmt_real(report.wall_clock_seconds), report.steps.to_string()]);
    ctx.write(&timing, "timings")?;
    eprintln!(
        "{}: best validation NLL {:.6} at epoch {}",
        config.model_kind, report.best_validation_nll, report.best_epoch
    );
    Ok(())
}

pub fn sweep(ctx: &Context, data: &Path) -> Result<()> {
    let dataset = read_dataset(data)?;
    let grid = ctx.cfg.sweep_grid()?;
    eprintln!("sweeping {} configurations on {} transitions", grid.len(), dataset.len());
    let result = hyperparameter_sweep(&grid, &dataset, ctx.seed()?)?;
    let ckpt_dir = ctx.out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::Io { path: ckpt_dir.clone(), source: e })?;

    let mut rank = vec![None; result.runs.len()];
    for (r, &i) in result.ranking.iter().enumerate() {
        rank[i] = Some(r + 1);
    }
    let mut table = CsvTable::new([
        "run",
        "rank",
        "model_kind",
        "layers",
        "width",
        "input_noise_sigma",
        "weight_decay",
        "learning_rate",
        "epochs",
        "batch_size",
        "optimizer",
        "status",
        "validation_nll",
        "best_epoch",
        "checkpoint",
    ]);
    let mut timing = CsvTable::new(["run", "wall_clock_seconds", "steps"]);
    for (i, run) in result.runs.iter().enumerate() {
        let c = &run.config;
        let (status, nll, best_epoch, path) = match &run.outcome {
            SweepOutcome::Trained { model, report } => {
                let rel = format!("checkpoints/run_{i:03}.ardm");
                let ckpt = Checkpoint::new(model.clone())
                    .with_meta("validation_nll", fmt_real(report.best_validation_nll))
                    .with_meta("best_epoch", report.best_epoch)
                    .with_meta("config_key", c.key())
                    .with_meta("config_digest", ctx.digest)
                    .with_meta("seed", c.seed);
                write_checkpoint(&ctx.out.join(&rel), &ckpt)?;
                timing.push(vec![i.to_string(), fmt_real(report.wall_clock_seconds), report.steps.to_string()]);
                ("trained", fmt_real(report.best_validation_nll), report.best_epoch.to_string(), rel)
            }
            SweepOutcome::Diverged { message } => {
                eprintln!("run {i} ({}) diverged: {message}", c.key());
                ("diverged", String::new(), String::new(), String::new())
            }
        };
        table.push(vec![
            i.to_string(),
            rank[i].map(|r| r.to_string()).unwrap_or_default(),
            c.model_kind.to_string(),
            c.layers.to_string(),
            c.width.to_string(),
            fmt_real(c.input_noise_sigma),
            fmt_real(c.weight_decay),
            fmt_real(c.learning_rate),
            c.epochs.to_string(),
            c.batch_size.to_string(),
            c.optimizer.as_str().to_string(),
            status.to_string(),
            nll,
            best_epoch,
            path,
        ]);
    }
    ctx.write(&table, "sweep")?;
    ctx.write(&timing, "timings")?;

    let mut summary = CsvTable::new(["model_kind", "top1_validation_nll", "top5_mean_validation_nll", "completed", "diverged"]);
    for s in result.summaries() {
        eprintln!("{}: top-1 {:.6}, top-5 mean {:.6}", s.model_kind, s.top1, s.top5_mean);
        summary.push(vec![
            s.model_kind.to_string(),
            fmt_real(s.top1),
            fmt_real(s.top5_mean),
            s.completed.to_string(),
            s.diverged.to_string(),
        ]);
    }
    ctx.write(&summary, "sweep_summary")
}

pub fn ope(ctx: &Context, checkpoints: &[PathBuf], initial_states: &Path, selected: &[usize]) -> Result<()> {
    let env = ctx.cfg.environment()?;
    let set = ctx.cfg.policy_set(&env)?;
    let indices: Vec<usize> = if selected.is_empty() { (0..set.len()).collect() } else { selected.to_vec() };
    let policies: Vec<&GaussianLinearPolicy> = indices.iter().map(|&i| policy_at(&set, i)).collect::<Result<_>>()?;
    let models: Vec<DynamicsModel> = checkpoints.iter().map(|p| load_model(p).map(|c| c.model)).collect::<Result<_>>()?;
    let members: Vec<&dyn TransitionModel> = models.iter().map(|m| m as &dyn TransitionModel).collect();
    let s0 = load_initial_states(initial_states)?;
    let gamma = ctx.cfg.f64("ope.gamma")?;
    let horizon = ctx.cfg.usize_or_env("ope.horizon", env.as_env().horizon())?;
    let rollouts = ctx.cfg.usize("ope.rollouts")?;
    let seed = ctx.seed()?;

    let truths = true_values(&env, ctx.cfg, &policies, &s0, gamma, horizon, seed)?;
    let mut estimates = Vec::with_capacity(policies.len());
    let mut table = CsvTable::new(["policy", "name", "mix", "estimate", "stderr", "truth", "n_rollouts", "diverged"]);
    for (j, (&idx, p)) in indices.iter().zip(&policies).enumerate() {
        let rep = ensemble_mb_ope(&members, *p, &s0, rollouts, gamma, horizon, seed)?;
        if rep.diverged > 0 {
            eprintln!("policy {idx}: {} of {} rollouts diverged and were excluded", rep.diverged, rep.n_rollouts);
        }
        table.push(vec![
            idx.to_string(),
            set.names[idx].clone(),
            fmt_real(set.mix[idx]),
            fmt_real(rep.estimate),
            fmt_real(rep.stderr),
            fmt_real(truths[j]),
            rep.n_rollouts.to_string(),
            rep.diverged.to_string(),
        ]);
        estimates.push(rep.estimate);
    }
    ctx.write(&table, "ope")?;

    if estimates.len() < 2 {
        eprintln!("one policy evaluated; metrics need at least two and are omitted");
        return Ok(());
    }
    let report = metrics_report(
        &estimates,
        &truths,
        ctx.cfg.usize("ope.top_k")?,
        ctx.cfg.usize("ope.bootstrap")?,
        derive_seed(seed, SALT_METRICS),
    )?;
    let mut metrics = CsvTable::new(["metric", "value", "bootstrap_mean", "bootstrap_std", "bootstrap_used", "bootstrap_skipped"]);
    for m in &report.metrics {
        let v = m.value.map(fmt_real).unwrap_or_default();
        let (bm, bs, bu, bk) = match &m.bootstrap {
            Some(b) => (fmt_real(b.mean), fmt_real(b.std), b.used.to_string(), b.skipped.to_string()),
            None => Default::default(),
        };
        match (&m.value, &m.bootstrap) {
            (Some(v), Some(b)) => eprintln!("{}: {v:.4} (bootstrap {:.4} ± {:.4})", m.name, b.mean, b.std),
            (Some(v), None) => eprintln!("{}: {v:.4}", m.name),
            _ => eprintln!("{}: undefined", m.name),
        }
        metrics.push(vec![m.name.clone(), v, bm, bs, bu, bk]);
    }
    ctx.write(&metrics, "metrics")
}

pub fn plan_eval(ctx: &Context, checkpoint: &Path) -> Result<()> {
    let env = ctx.cfg.environment()?;
    let set = ctx.cfg.policy_set(&env)?;
    let policy = policy_at(&set, ctx.cfg.usize("plan.policy")?)?;
    let model = load_model(checkpoint)?.model;
    let mppi = ctx.cfg.mppi()?;
    let critic: Box<dyn Critic> = match ctx.cfg.get("plan.critic") {
        "zero" => Box::new(ZeroCritic),
        "analytic" => {
            let lin = env
                .linear()
                .ok_or_else(|| Error::Config("plan.critic = analytic needs a linear environment".into()))?;
            Box::new(LqCritic::new(lin, policy, mppi.gamma)?)
        }
        other => return Err(Error::Config(format!("plan.critic must be analytic or zero, got {other:?}"))),
    };
    let episodes = ctx.cfg.usize("plan.episodes")?;
    let len = ctx.cfg.usize_or_env("plan.episode_len", env.as_env().horizon())?;
    let eval = evaluate_planner(env.as_env(), policy, &model, critic.as_ref(), &mppi, episodes, len, ctx.seed()?)?;

    let mut table = CsvTable::new(["arm", "episode", "return"]);
    for (arm, returns) in [("planned", &eval.planned_returns), ("raw", &eval.raw_returns)] {
        for (e, r) in returns.iter().enumerate() {
            table.push(vec![arm.into(), e.to_string(), fmt_real(*r)]);
        }
    }
    ctx.write(&table, "plan")?;
    let mut summary = CsvTable::new([
        "episodes",
        "planned_mean",
        "planned_stderr",
        "raw_mean",
        "raw_stderr",
        "difference_mean",
        "difference_stderr",
        "z_score",
    ]);
    summary.push(vec![
        episodes.to_string(),
        fmt_real(eval.planned.value),
        fmt_real(eval.planned.stderr),
        fmt_real(eval.raw.value),
        fmt_real(eval.raw.stderr),
        fmt_real(eval.difference.value),
        fmt_real(eval.difference.stderr),
        fmt_real(eval.z_score()),
    ]);
    eprintln!(
        "planned {:.4} vs raw {:.4}: difference {:.4} ± {:.4} (z = {:.2})",
        eval.planned.value,
        eval.raw.value,
        eval.difference.value,
        eval.difference.stderr,
        eval.z_score()
    );
    ctx.write(&summary, "plan_summary")
}

pub fn augment(ctx: &Context, checkpoint: &Path, data: &Path) -> Result<()> {
    let env = ctx.cfg.environment()?;
    let set = ctx.cfg.policy_set(&env)?;
    let index = match ctx.cfg.get("augment.policy") {
        "behavior" => ctx.cfg.usize("data.behavior_policy")?,
        _ => ctx.cfg.usize("augment.policy")?,
    };
    let policy = policy_at(&set, index)?;
    let dataset = read_dataset(data)?;
    let model = load_model(checkpoint)?.model;
    let out = augment_dataset(&dataset, policy, &model, ctx.cfg.f64("augment.ratio")?, ctx.seed()?)?;
    write_dataset(&ctx.out.join(AUGMENTED_FILE), &out.data, ctx.cfg.real_width()?)?;
    write_origin_flags(&ctx.out.join(ORIGIN_FILE), &out.synthetic)?;
    let mut table = CsvTable::new(["recorded", "synthetic", "total"]);
    table.push(vec![
        dataset.len().to_string(),
        out.synthetic_count().to_string(),
        out.data.len().to_string(),
    ]);
    eprintln!("appended {} synthetic transitions to {}", out.synthetic_count(), dataset.len());
    ctx.write(&table, "augment")
}

fn sweep_checkpoints(dir: &Path) -> Result<Vec<PathBuf>> {
    let ckpt_dir = dir.join("checkpoints");
    let entries = fs::read_dir(&ckpt_dir).map_err(|e| Error::Io { path: ckpt_dir.clone(), source: e })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ardm"))
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn study(ctx: &Context, checkpoints: &[PathBuf], sweep_dir: Option<&Path>, initial_states: &Path) -> Result<()> {
    let mut paths = checkpoints.to_vec();
    if let Some(dir) = sweep_dir {
        paths.extend(sweep_checkpoints(dir)?);
    }
    let env = ctx.cfg.environment()?;
    let set = ctx.cfg.policy_set(&env)?;
    let s0 = load_initial_states(initial_states)?;
    let gamma = ctx.cfg.f64("ope.gamma")?;
    let horizon = ctx.cfg.usize_or_env("ope.horizon", env.as_env().horizon())?;
    let seed = ctx.seed()?;

    let mut loaded = Vec::with_capacity(paths.len());
    for p in &paths {
        let ckpt = load_model(p)?;
        let nll = ckpt
            .validation_nll()
            .ok_or_else(|| Error::Format { path: p.clone(), message: "checkpoint carries no validation_nll".into() })?;
        let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        loaded.push((id, nll, ckpt.model));
    }
    let models: Vec<StudyModel> = loaded
        .iter()
        .map(|(id, nll, m)| StudyModel { id: id.clone(), validation_nll: *nll, model: m })
        .collect();
    let refs: Vec<&GaussianLinearPolicy> = set.policies.iter().collect();
    let policies: Vec<(&str, &dyn Policy)> =
        set.names.iter().zip(&set.policies).map(|(n, p)| (n.as_str(), p as &dyn Policy)).collect();
    let truths = true_values(&env, ctx.cfg, &refs, &s0, gamma, horizon, seed)?;
    let result = nll_vs_ope_study(&models, &policies, &truths, &s0, ctx.cfg.usize("ope.rollouts")?, gamma, horizon, seed)?;

    let mut cells = CsvTable::new(["model", "validation_nll", "policy", "estimate", "stderr", "truth"]);
    for c in &result.cells {
        let nll = result.rows.iter().find(|r| r.model_id == c.model_id).map(|r| r.validation_nll).unwrap_or(f64::NAN);
        cells.push(vec![
            c.model_id.clone(),
            fmt_real(nll),
            c.policy_id.clone(),
            fmt_real(c.estimate),
            fmt_real(c.stderr),
            fmt_real(c.truth),
        ]);
    }
    ctx.write(&cells, "study_cells")?;
    let mut rows = CsvTable::new(["model", "validation_nll", "pearson_r"]);
    for r in &result.rows {
        rows.push(vec![r.model_id.clone(), fmt_real(r.validation_nll), r.pearson_r.map(fmt_real).unwrap_or_default()]);
    }
    ctx.write(&rows, "study")?;
    let mut trend = CsvTable::new(["models", "policies", "spearman_neg_nll_vs_pearson"]);
    trend.push(vec![
        result.rows.len().to_string(),
        policies.len().to_string(),
        result.trend.map(fmt_real).unwrap_or_default(),
    ]);
    match result.trend {
        Some(t) => eprintln!("rank correlation of -validation NLL with OPE Pearson r: {t:.4}"),
        None => eprintln!("rank correlation of -validation NLL with OPE Pearson r: undefined"),
    }
    ctx.write(&trend, "study_trend")
}
