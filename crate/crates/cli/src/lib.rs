//! `ardm`: data generation, training, sweeps, OPE, planner evaluation,
//! augmentation and the NLL-vs-OPE study from one binary.
//!
//! Every command writes into a fresh output directory holding
//! `config.resolved` (the full configuration) and reports whose first line
//! carries the configuration digest. Exit codes: 0 success, 2 configuration,
//! 3 data format, 4 numeric divergence, 5 planning failure, 1 other.

mod commands;

use std::fs;
use std::path::{Path, PathBuf};

use ardm::config::RunConfig;
use ardm::{Error, Result};
use clap::{Args, Parser, Subcommand};

pub const OUTPUT_ROOT_ENV: &str = "ARDM_OUTPUT_ROOT";
pub const SNAPSHOT_FILE: &str = "config.resolved";

#[derive(Debug, Parser)]
#[command(name = "ardm", version, about = "Probabilistic dynamics models for model-based OPE and planning")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the `threads` key; 1 forces the serial path.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Replace an existing output directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect transitions from the configured environment and behavior policy.
    GenData,
    /// Train one model with the `train.*` settings.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the `sweep.*` grid and rank it by validation NLL.
    Sweep {
        #[arg(long)]
        data: PathBuf,
    },
    /// Model-based OPE of the policy set; several checkpoints form an ensemble.
    Ope {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        initial_states: PathBuf,
        /// Evaluate only these policy indices.
        #[arg(long = "policy")]
        policies: Vec<usize>,
        /// Overrides `ope.gamma`.
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Paired evaluation of MPPI planning against the raw policy.
    PlanEval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Append model-generated transitions to a dataset.
    Augment {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// OPE quality of every checkpoint against its validation NLL.
    Study {
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        /// A `sweep` output directory; all of its checkpoints are used.
        #[arg(long)]
        sweep_dir: Option<PathBuf>,
        #[arg(long)]
        initial_states: PathBuf,
        #[arg(long)]
        gamma: Option<f64>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train { .. } => "train",
            Command::Sweep { .. } => "sweep",
            Command::Ope { .. } => "ope",
            Command::PlanEval { .. } => "plan-eval",
            Command::Augment { .. } => "augment",
            Command::Study { .. } => "study",
        }
    }
}

/// Configuration after the file, `--set`, and the dedicated flags.
pub fn resolve_config(common: &CommonArgs, command: &Command) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(t) = common.threads {
        cfg.set("threads", &t.to_string())?;
    }
    if let Command::Ope { gamma: Some(g), .. } | Command::Study { gamma: Some(g), .. } = command {
        cfg.set("ope.gamma", &g.to_string())?;
    }
    Ok(cfg)
}

fn output_dir(common: &CommonArgs, cfg: &RunConfig, command: &Command) -> PathBuf {
    if let Some(out) = &common.out {
        return out.clone();
    }
    match cfg.get("output_dir") {
        "" => {
            let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
            root.join(command.name())
        }
        dir => PathBuf::from(dir),
    }
}

/// Creates `dir`, refusing to reuse a non-empty one unless `force`.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    let occupied = dir.exists() && (dir.is_file() || fs::read_dir(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?.next().is_some());
    if occupied {
        if !force {
            return Err(Error::Config(format!(
                "output directory {} already exists; pass --force to replace it",
                dir.display()
            )));
        }
        let removed = if dir.is_file() { fs::remove_file(dir) } else { fs::remove_dir_all(dir) };
        removed.map_err(|e| Error::Io { path: dir.into(), source: e })?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.common, &cli.command)?;
    let threads = cfg.usize("threads")?;
    if threads > 0 {
        // Fails only if a pool already exists (tests calling `run` twice).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let out = output_dir(&cli.common, &cfg, &cli.command);
    prepare_output_dir(&out, cli.common.force)?;
    let digest = cfg.digest();
    let snapshot = format!("# config_digest={digest}\n{}", cfg.snapshot());
    ardm::io::atomic_write(&out.join(SNAPSHOT_FILE), snapshot.as_bytes())?;
    let ctx = commands::Context { cfg: &cfg, out: &out, digest: &digest };
    match &cli.command {
        Command::GenData => commands::gen_data(&ctx),
        Command::Train { data } => commands::train(&ctx, data),
        Command::Sweep { data } => commands::sweep(&ctx, data),
        Command::Ope { checkpoints, initial_states, policies, .. } => {
            commands::ope(&ctx, checkpoints, initial_states, policies)
        }
        Command::PlanEval { checkpoint } => commands::plan_eval(&ctx, checkpoint),
        Command::Augment { checkpoint, data } => commands::augment(&ctx, checkpoint, data),
        Command::Study { checkpoints, sweep_dir, initial_states, .. } => {
            commands::study(&ctx, checkpoints, sweep_dir.as_deref(), initial_states)
        }
    }
}
