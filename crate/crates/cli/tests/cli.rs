use std::path::{Path, PathBuf};
use std::process::Command;

use auxcnn_cli::commands::{compare_runs, compare_csv, ttest_csv, RunResult};
use auxcnn_core::data::Image;
use auxcnn_core::eval::{classification_metrics, ConfusionMatrix};
use auxcnn_core::training::Method;

const SMOKE: &str = "seed = 3
repeats = 1
output_dir = runs
dataset.scale = 0.01
dataset.extra_per_class = 12
split.test_per_class = 12
model.base_width = 4
model.feature_width = 16
model.rnet_hidden = 32
model.rnet_channels = 16
model.dnet_base_channels = 4
train.epochs = 1
";

fn auxcnn(dir: &Path, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_auxcnn"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn setup(extra: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, format!("{SMOKE}{extra}")).unwrap();
    (dir, cfg)
}

#[test]
fn config_errors_exit_2() {
    let (dir, cfg) = setup("train.epoch = 4\n");
    let (code, _, err) = auxcnn(dir.path(), &["--config", cfg.to_str().unwrap(), "train"]);
    assert_eq!(code, 2);
    assert!(err.contains("unknown key train.epoch"), "{err}");

    let (dir, cfg) = setup("model.image_size = 64\n");
    assert_eq!(auxcnn(dir.path(), &["--config", cfg.to_str().unwrap(), "train"]).0, 2);

    let (dir, cfg) = setup("");
    let (code, _, err) = auxcnn(
        dir.path(),
        &["--config", cfg.to_str().unwrap(), "evaluate", "--checkpoint", "missing.bin", "--out", "ev"],
    );
    assert_eq!(code, 2);
    assert!(err.contains("missing.bin"), "{err}");

    let (code, _, _) = auxcnn(dir.path(), &["--config", cfg.to_str().unwrap(), "compare"]);
    assert_eq!(code, 2, "one repeat is not enough to compare");
}

#[test]
fn missing_config_file_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(auxcnn(dir.path(), &["--config", "nope.cfg", "train"]).0, 4);
}

#[test]
fn train_evaluate_reconstruct_round_trip() {
    let (dir, cfg) = setup("methods = rnet+dnet, baseline\n");
    let c = cfg.to_str().unwrap();
    let (code, out, err) = auxcnn(dir.path(), &["--config", c, "train"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("rnet+dnet seed 3"), "{out}");
    let run = dir.path().join("runs/rnet_dnet/seed_3");
    for f in ["checkpoint.bin", "log.csv", "epochs.csv", "metrics.json", "metrics.csv", "summary.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert!(dir.path().join("runs/baseline/aggregate.csv").exists());
    let log = std::fs::read_to_string(run.join("log.csv")).unwrap();
    assert!(log.starts_with("epoch,iter,L_cls,L_rec,L_adv,L_cmb,D_loss\n"));

    // Same test data and weights: evaluation reproduces the training-time report.
    let ck = run.join("checkpoint.bin");
    let (code, _, err) = auxcnn(dir.path(), &["--config", c, "evaluate", "--checkpoint", ck.to_str().unwrap(), "--out", "ev"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(
        std::fs::read(run.join("metrics.csv")).unwrap(),
        std::fs::read(dir.path().join("ev/metrics.csv")).unwrap()
    );

    let (code, out, err) = auxcnn(
        dir.path(),
        &["--config", c, "reconstruct", "--checkpoint", ck.to_str().unwrap(), "--out", "rec", "--limit", "2"],
    );
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("wrote 2 pairs"));
    let first = std::fs::read_dir(dir.path().join("rec")).unwrap().next().unwrap().unwrap().path();
    let img = Image::load_pgm(&first).unwrap();
    assert_eq!((img.width(), img.height()), (64, 32));

    let base = dir.path().join("runs/baseline/seed_3/checkpoint.bin");
    let (code, _, err) = auxcnn(
        dir.path(),
        &["--config", c, "reconstruct", "--checkpoint", base.to_str().unwrap(), "--out", "rec2"],
    );
    assert_eq!(code, 2);
    assert!(err.contains("R-Net"), "{err}");
}

#[test]
fn seed_flag_overrides_config() {
    let (dir, cfg) = setup("");
    let (code, out, _) = auxcnn(dir.path(), &["--config", cfg.to_str().unwrap(), "--seed", "11", "train"]);
    assert_eq!(code, 0);
    assert!(out.contains("seed 11"), "{out}");
    assert!(dir.path().join("runs/rnet_dnet/seed_11/summary.json").exists());
}

#[test]
fn synth_writes_manifest() {
    let (dir, cfg) = setup("");
    let (code, out, _) = auxcnn(dir.path(), &["--config", cfg.to_str().unwrap(), "synth", "--out", "data"]);
    assert_eq!(code, 0);
    assert!(out.contains("[16, 91, 66]"), "{out}");
    let manifest = std::fs::read_to_string(dir.path().join("data/manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 16 + 91 + 66);
    let labels = std::fs::read_to_string(dir.path().join("data/labels.csv")).unwrap();
    assert!(labels.starts_with("filename,class\n"));
}

#[test]
fn directory_dataset_trains() {
    let (dir, cfg) = setup("");
    assert_eq!(auxcnn(dir.path(), &["--config", cfg.to_str().unwrap(), "synth", "--out", "data"]).0, 0);
    let cfg2 = dir.path().join("dir.cfg");
    let text = SMOKE
        .lines()
        .filter(|l| !l.starts_with("dataset."))
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(
        &cfg2,
        format!("{text}\ndataset.source = directory\ndataset.path = data\ndataset.labels = data/labels.csv\nmethods = baseline\n"),
    )
    .unwrap();
    let (code, out, err) = auxcnn(dir.path(), &["--config", cfg2.to_str().unwrap(), "train"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("baseline seed 3"), "{out}");
}

fn report(tp: u64, fp: u64) -> auxcnn_core::eval::MetricsReport {
    classification_metrics(&ConfusionMatrix::from_counts(2, vec![10, fp, 10 - tp, tp]).unwrap()).unwrap()
}

fn run(method: Method, seed: u64, tp: u64, fp: u64) -> RunResult {
    RunResult {
        method,
        seed,
        dir: PathBuf::new(),
        report: report(tp, fp),
        best_epoch: 1,
        best_val_accuracy: 1.0,
    }
}

#[test]
fn identical_runs_give_half_p_values() {
    let runs: Vec<RunResult> = [Method::Baseline, Method::RNetDNet]
        .into_iter()
        .flat_map(|m| (0..3).map(move |s| run(m, s, 8, 1)))
        .collect();
    let cmp = compare_runs(&runs, Method::Baseline).unwrap();
    let full = cmp.iter().find(|c| c.method == Method::RNetDNet).unwrap();
    assert_eq!(full.tests.len(), 4);
    assert!(full.tests.iter().all(|(_, t)| t.p == 0.5));
    let table = ttest_csv(&cmp, Method::Baseline);
    assert_eq!(table.lines().count(), 5);
    assert!(compare_csv(&cmp).contains("rnet+dnet,f1,"));
}

#[test]
fn better_method_gets_small_p() {
    let mut runs = Vec::new();
    for s in 0..3 {
        runs.push(run(Method::Baseline, s, 6 + s, 3));
        runs.push(run(Method::RNetDNet, s, 9 + s % 2, 0));
    }
    let cmp = compare_runs(&runs, Method::Baseline).unwrap();
    let full = cmp.iter().find(|c| c.method == Method::RNetDNet).unwrap();
    let (_, f1) = full.tests.iter().find(|(k, _)| *k == "f1").unwrap();
    assert!(f1.p < 0.05, "{f1:?}");
    assert!(compare_runs(&runs[..2], Method::Baseline).is_err(), "single repeats are rejected");
}
