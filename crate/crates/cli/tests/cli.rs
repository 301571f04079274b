use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ardm::io::{encode_dataset, read_dataset, read_origin_flags, CsvTable, RealWidth};
use sha2::{Digest, Sha256};

const TINY: &str = "\
data.transitions = 400
env.horizon = 20
train.epochs = 2
train.width = 16
train.layers = 2
ope.rollouts = 20
ope.bootstrap = 50
plan.episodes = 30
plan.episode_len = 5
mppi.candidates = 4
";

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("run.cfg"), config).unwrap();
        Workspace { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn ardm(&self, args: &[&str]) -> Output {
        let cfg = self.path("run.cfg");
        Command::new(env!("CARGO_BIN_EXE_ardm"))
            .current_dir(self.dir.path())
            .env("ARDM_OUTPUT_ROOT", self.path("runs"))
            .arg("--config")
            .arg(&cfg)
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.ardm(args);
        assert!(out.status.success(), "ardm {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        out
    }
}

fn csv(path: &Path) -> CsvTable {
    CsvTable::parse_csv(&fs::read_to_string(path).unwrap()).unwrap()
}

fn file_sha(path: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(path).unwrap()).to_vec()
}

/// Every file under `dir` except wall-clock timings, with its contents.
fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.file_name().unwrap().to_string_lossy().starts_with("timings") {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_file_size_follows_header_arithmetic() {
    let ws = Workspace::new("env.state_dim = 5\nenv.action_dim = 1\ndata.transitions = 100\nenv.horizon = 10\n");
    ws.ok(&["gen-data"]);
    let header = 4 + 2 + 4 + 4 + 8 + 1;
    let expected = header + 100 * (5 + 1 + 1 + 5) * 8;
    assert_eq!(fs::metadata(ws.path("runs/gen-data/dataset.ards")).unwrap().len(), expected as u64);
    assert_eq!(fs::metadata(ws.path("runs/gen-data/initial_states.ars0")).unwrap().len(), (4 + 2 + 4 + 8 + 1 + 10 * 5 * 8) as u64);
}

#[test]
fn truncated_dataset_is_rejected_with_format_exit_code() {
    let ws = Workspace::new(TINY);
    ws.ok(&["gen-data"]);
    let bytes = fs::read(ws.path("runs/gen-data/dataset.ards")).unwrap();
    fs::write(ws.path("cut.ards"), &bytes[..bytes.len() - 5]).unwrap();
    let out = ws.ardm(&["train", "--data", "cut.ards"]);
    assert_eq!(out.status.code(), Some(3));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains(&format!("{}", bytes.len())) && msg.contains(&format!("{}", bytes.len() - 5)), "{msg}");

    let mut flipped = bytes.clone();
    flipped[0] = b'X';
    fs::write(ws.path("magic.ards"), &flipped).unwrap();
    assert_eq!(ws.ardm(&["--out", "m", "train", "--data", "magic.ards"]).status.code(), Some(3));
}

#[test]
fn existing_output_needs_force() {
    let ws = Workspace::new(TINY);
    ws.ok(&["gen-data"]);
    let again = ws.ardm(&["gen-data"]);
    assert_eq!(again.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    ws.ok(&["gen-data", "--force"]);
}

#[test]
fn config_errors_exit_2() {
    let ws = Workspace::new("no_such_key = 1\n");
    assert_eq!(ws.ardm(&["gen-data"]).status.code(), Some(2));
    let ws = Workspace::new(TINY);
    ws.ok(&["gen-data"]);
    let bad_opt = ws.ardm(&["--set", "train.optimizer=rmsprop", "train", "--data", "runs/gen-data/dataset.ards"]);
    assert_eq!(bad_opt.status.code(), Some(2));
    assert_eq!(ws.ardm(&["--set", "seed=minus one", "--out", "s", "gen-data"]).status.code(), Some(2));
}

#[test]
fn snapshot_digest_appears_in_every_csv() {
    let ws = Workspace::new(TINY);
    ws.ok(&["gen-data"]);
    ws.ok(&["train", "--data", "runs/gen-data/dataset.ards"]);
    let snap = fs::read_to_string(ws.path("runs/train/config.resolved")).unwrap();
    let body: String = snap.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let digest: String = Sha256::digest(body.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
    assert!(snap.starts_with(&format!("# config_digest={digest}")));
    for name in ["train.csv", "timings.csv"] {
        let text = fs::read_to_string(ws.path("runs/train").join(name)).unwrap();
        assert!(text.lines().next().unwrap().contains(&format!("config_digest={digest}")), "{name}");
    }
    let curve = csv(&ws.path("runs/train/train.csv"));
    assert_eq!(curve.rows.len(), 3);
}

#[test]
fn resolved_config_echoes_defaults() {
    let ws = Workspace::new("");
    ws.ok(&["--set", "data.transitions=50", "--set", "env.horizon=5", "gen-data"]);
    let snap = fs::read_to_string(ws.path("runs/gen-data/config.resolved")).unwrap();
    for line in [
        "ope.gamma = 0.995",
        "mppi.iterations = 3",
        "mppi.candidates = 16",
        "mppi.horizon = 10",
        "mppi.beta = 0.1",
        "mppi.sigma_sq = 0.01",
        "augment.ratio = 1.0",
    ] {
        assert!(snap.lines().any(|l| l == line), "{line}");
    }
}

#[test]
fn commands_are_byte_identical_on_rerun() {
    let ws = Workspace::new(TINY);
    let run_all = |root: &str| {
        let o = |c: &str| format!("{root}/{c}");
        ws.ok(&["--threads", "1", "--out", &o("data"), "gen-data"]);
        let data = o("data/dataset.ards");
        let s0 = o("data/initial_states.ars0");
        ws.ok(&["--threads", "1", "--out", &o("train"), "train", "--data", &data]);
        let model = o("train/model.ardm");
        ws.ok(&["--threads", "1", "--out", &o("ope"), "ope", "--checkpoint", &model, "--initial-states", &s0]);
        ws.ok(&["--threads", "1", "--out", &o("aug"), "augment", "--checkpoint", &model, "--data", &data]);
        ws.ok(&["--threads", "1", "--out", &o("plan"), "--set", "plan.critic=zero", "plan-eval", "--checkpoint", &model]);
    };
    run_all("a");
    run_all("b");
    let (a, b) = (tree(&ws.path("a")), tree(&ws.path("b")));
    assert_eq!(a.len(), b.len());
    assert!(a.len() >= 15);
    for ((pa, ba), (pb, bb)) in a.iter().zip(&b) {
        assert_eq!(pa, pb);
        assert!(ba == bb, "{} differs between reruns", pa.display());
    }
    assert_eq!(file_sha(&ws.path("a/train/model.ardm")), file_sha(&ws.path("b/train/model.ardm")));
}

#[test]
fn ope_reports_metrics_only_for_several_policies() {
    let ws = Workspace::new(TINY);
    ws.ok(&["gen-data"]);
    ws.ok(&["train", "--data", "runs/gen-data/dataset.ards"]);
    let common = ["--checkpoint", "runs/train/model.ardm", "--initial-states", "runs/gen-data/initial_states.ars0"];
    let mut single = vec!["--out", "one", "ope", "--policy", "3"];
    single.extend(common);
    ws.ok(&single);
    let table = csv(&ws.path("one/ope.csv"));
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0][0], "3");
    assert!(!ws.path("one/metrics.csv").exists());

    let mut all = vec!["--out", "all", "ope"];
    all.extend(common);
    ws.ok(&all);
    assert_eq!(csv(&ws.path("all/ope.csv")).rows.len(), 10);
    let metrics = csv(&ws.path("all/metrics.csv"));
    let names: Vec<&str> = metrics.rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["spearman_rho", "pearson_r", "absolute_error", "regret_at_k", "normalized_regret_at_k"]);
    let rho = &metrics.rows[0];
    assert!(rho[1].parse::<f64>().unwrap().abs() <= 1.0);
    assert!(rho[3].parse::<f64>().unwrap() >= 0.0);

    // ensemble path: two checkpoints
    let mut ens = vec!["--out", "ens", "ope", "--checkpoint", "runs/train/model.ardm"];
    ens.extend(common);
    ws.ok(&ens);
    assert_eq!(csv(&ws.path("ens/ope.csv")).rows.len(), 10);
}

#[test]
fn gamma_flag_lands_in_the_snapshot() {
    let ws = Workspace::new(TINY);
    ws.ok(&["gen-data"]);
    ws.ok(&["train", "--data", "runs/gen-data/dataset.ards"]);
    ws.ok(&[
        "--out",
        "g",
        "ope",
        "--gamma",
        "0.9",
        "--checkpoint",
        "runs/train/model.ardm",
        "--initial-states",
        "runs/gen-data/initial_states.ars0",
    ]);
    let snap = fs::read_to_string(ws.path("g/config.resolved")).unwrap();
    assert!(snap.lines().any(|l| l == "ope.gamma = 0.9"));
}

#[test]
fn sweep_full_grid_has_48_rows_per_family() {
    let ws = Workspace::new("data.transitions = 60\nenv.horizon = 10\ntrain.epochs = 0\n");
    ws.ok(&["gen-data"]);
    ws.ok(&["sweep", "--data", "runs/gen-data/dataset.ards"]);
    let table = csv(&ws.path("runs/sweep/sweep.csv"));
    let kind = table.column("model_kind").unwrap();
    for family in ["feedforward", "autoregressive"] {
        assert_eq!(table.rows.iter().filter(|r| r[kind] == family).count(), 48);
    }
    let ckpt = table.column("checkpoint").unwrap();
    assert!(table.rows.iter().all(|r| ws.path("runs/sweep").join(&r[ckpt]).exists()));
    let summary = csv(&ws.path("runs/sweep/sweep_summary.csv"));
    assert_eq!(summary.rows.len(), 2);
    for row in &summary.rows {
        let (top1, top5): (f64, f64) = (row[1].parse().unwrap(), row[2].parse().unwrap());
        assert!(top5 >= top1);
    }
}

#[test]
fn plan_eval_degenerate_planner_matches_raw_policy() {
    let ws = Workspace::new(TINY);
    ws.ok(&["gen-data"]);
    ws.ok(&["train", "--data", "runs/gen-data/dataset.ards"]);
    ws.ok(&[
        "--set",
        "plan.critic=zero",
        "--set",
        "mppi.horizon=0",
        "--set",
        "plan.episodes=200",
        "plan-eval",
        "--checkpoint",
        "runs/train/model.ardm",
    ]);
    let rows = csv(&ws.path("runs/plan-eval/plan.csv"));
    assert_eq!(rows.rows.len(), 400);
    let summary = csv(&ws.path("runs/plan-eval/plan_summary.csv"));
    let z: f64 = summary.rows[0][summary.column("z_score").unwrap()].parse().unwrap();
    assert!(z.abs() < 3.0, "z = {z}");
}

#[test]
fn augment_doubles_and_round_trips() {
    let ws = Workspace::new(TINY);
    ws.ok(&["gen-data"]);
    ws.ok(&["train", "--data", "runs/gen-data/dataset.ards"]);
    ws.ok(&["augment", "--checkpoint", "runs/train/model.ardm", "--data", "runs/gen-data/dataset.ards"]);
    let merged_path = ws.path("runs/augment/augmented.ards");
    let merged = read_dataset(&merged_path).unwrap();
    assert_eq!(merged.len(), 800);
    let flags = read_origin_flags(&ws.path("runs/augment/augmented.ardo")).unwrap();
    assert_eq!(flags.iter().filter(|f| **f).count(), 400);
    assert!(flags[..400].iter().all(|f| !f));
    assert_eq!(encode_dataset(&merged, RealWidth::F64), fs::read(&merged_path).unwrap());

    let zero = ws.ardm(&[
        "--out",
        "zero",
        "--set",
        "augment.ratio=0",
        "augment",
        "--checkpoint",
        "runs/train/model.ardm",
        "--data",
        "runs/gen-data/dataset.ards",
    ]);
    assert_eq!(zero.status.code(), Some(2));
}

#[test]
fn study_has_one_row_per_checkpoint() {
    let ws = Workspace::new(&format!(
        "{TINY}sweep.reference_grid = false\nsweep.widths = 16\nsweep.layers = 2\nsweep.input_noise_sigmas = 0\nsweep.weight_decays = 0\n"
    ));
    ws.ok(&["gen-data"]);
    ws.ok(&["sweep", "--data", "runs/gen-data/dataset.ards"]);
    let out = ws.ok(&["study", "--sweep-dir", "runs/sweep", "--initial-states", "runs/gen-data/initial_states.ars0"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("rank correlation"));
    let rows = csv(&ws.path("runs/study/study.csv"));
    assert_eq!(rows.columns, ["model", "validation_nll", "pearson_r"]);
    assert_eq!(rows.rows.len(), 4);
    assert_eq!(csv(&ws.path("runs/study/study_cells.csv")).rows.len(), 40);
    let trend = csv(&ws.path("runs/study/study_trend.csv"));
    assert_eq!(trend.rows.len(), 1);
}
