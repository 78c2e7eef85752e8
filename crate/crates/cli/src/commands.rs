//! The six experiment verbs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use auxcnn_core::data::{
    generate_synthetic_dataset, load_dataset, split_dataset, write_dataset_dir, Dataset, Image,
};
use auxcnn_core::eval::{
    aggregate_runs, roc_curve, welch_ttest_one_sided, write_metrics_csv, write_metrics_json, write_roc_csv,
    MetricsReport, RunAggregate, TTest,
};
use auxcnn_core::gradcheck::{suite, SuiteEntry};
use auxcnn_core::networks::ModelBundle;
use auxcnn_core::training::{evaluate_model, load_checkpoint, read_checkpoint, Evaluation, Method, Trainer};
use auxcnn_core::{Error, Result};

use crate::config::{DatasetSource, ExperimentConfig};

/// Metrics that receive a significance test in [`compare`].
pub const TESTED_METRICS: [&str; 4] = ["precision", "sensitivity", "specificity", "f1"];

/// Directory-safe name of a method.
pub fn method_dir(method: Method) -> String {
    method.name().replace('+', "_")
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn to_json<T: serde::Serialize + ?Sized>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// The full dataset named by the config.
pub fn load_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetSource::Directory { root, labels } => load_dataset(root, labels),
        source => {
            let spec = source.synthetic_spec().expect("synthetic source");
            Ok(generate_synthetic_dataset(&spec)?.0)
        }
    }
}

/// Training, validation and test sets; the training set is subsampled per class
/// when `dataset.fraction < 1`.
pub fn load_splits(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset, Dataset)> {
    let full = load_data(cfg)?;
    let (mut train, val, test) = split_dataset(&full, &cfg.split)?;
    if cfg.dataset_fraction < 1.0 {
        train = train.stratified_fraction(cfg.dataset_fraction, cfg.seed)?;
    }
    Ok((train, val, test))
}

/// Writes the synthetic dataset with its manifest to `out`.
pub fn synth(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset> {
    let spec = cfg
        .dataset
        .synthetic_spec()
        .ok_or_else(|| Error::Config("synth needs a synthetic dataset source".into()))?;
    let (ds, manifest) = generate_synthetic_dataset(&spec)?;
    write_dataset_dir(&ds, out, Some(&manifest))?;
    Ok(ds)
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub method: Method,
    pub seed: u64,
    pub dir: PathBuf,
    pub report: MetricsReport,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

fn write_evaluation(ev: &Evaluation, class_names: &[String], dir: &Path) -> Result<()> {
    write_metrics_json(&ev.report, &dir.join("metrics.json"))?;
    write_metrics_csv(&ev.report, class_names, &dir.join("metrics.csv"))?;
    if class_names.len() == 2 {
        let positives: Vec<bool> = ev.labels.iter().map(|&y| y == 1).collect();
        write_roc_csv(&roc_curve(&ev.positive_scores(), &positives)?, &dir.join("roc.csv"))?;
    }
    Ok(())
}

fn epochs_csv(trainer: &Trainer) -> String {
    let mut s = String::from("epoch,iterations,mean_cls,mean_cmb,val_accuracy\n");
    for e in trainer.epochs() {
        let _ = writeln!(s, "{},{},{},{},{}", e.epoch, e.iterations, e.mean_cls, e.mean_cmb, e.val_accuracy);
    }
    s
}

/// Trains and evaluates one method with one seed in `dir`.
pub fn run_one(
    cfg: &ExperimentConfig,
    method: Method,
    seed: u64,
    data: &(Dataset, Dataset, Dataset),
    dir: &Path,
) -> Result<RunResult> {
    let (train, val, test) = data;
    mkdir(dir)?;
    let bundle_cfg = cfg.model.bundle_config(method, train.class_count())?;
    let mut tc = cfg.run_config(method, seed);
    tc.checkpoint_path = Some(dir.join("checkpoint.bin"));
    let mut trainer = Trainer::new(bundle_cfg, tc)?;
    trainer.fit(train, val, |_| {})?;
    trainer.write_log(&dir.join("log.csv"))?;
    write(&dir.join("epochs.csv"), &epochs_csv(&trainer))?;
    let best = trainer.best().ok_or_else(|| Error::Input("no epoch completed".into()))?;
    let ev = evaluate_model(&trainer.best_bundle(), test)?;
    write_evaluation(&ev, test.class_names(), dir)?;
    let summary = serde_json::json!({
        "method": method.name(),
        "seed": seed,
        "best_epoch": best.epoch,
        "best_val_accuracy": best.accuracy,
        "iterations": trainer.iteration(),
        "test": ev.report.scalars().into_iter().collect::<std::collections::BTreeMap<_, _>>(),
    });
    write(&dir.join("summary.json"), &to_json(&summary))?;
    Ok(RunResult {
        method,
        seed,
        dir: dir.to_path_buf(),
        report: ev.report,
        best_epoch: best.epoch,
        best_val_accuracy: best.accuracy,
    })
}

/// Worker threads for repeats, from `AUXCNN_THREADS` (default 1).
pub fn worker_count() -> usize {
    std::env::var("AUXCNN_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or(1)
}

fn aggregate_csv(agg: &RunAggregate) -> String {
    let mut s = String::from("metric,mean,std\n");
    for (k, m) in &agg.metrics {
        let _ = writeln!(s, "{k},{},{}", m.mean, m.std);
    }
    s
}

/// All repeats of every configured method. The split always uses the base seed;
/// repeat `r` trains with seed `seed + r`.
pub fn train(cfg: &ExperimentConfig) -> Result<Vec<RunResult>> {
    train_methods(cfg, &cfg.methods)
}

fn train_methods(cfg: &ExperimentConfig, methods: &[Method]) -> Result<Vec<RunResult>> {
    let data = load_splits(cfg)?;
    let jobs: Vec<(Method, u64)> = methods
        .iter()
        .flat_map(|&m| (0..cfg.repeats as u64).map(move |r| (m, cfg.seed + r)))
        .collect();
    let run = |&(m, s): &(Method, u64)| {
        let dir = cfg.output_dir.join(method_dir(m)).join(format!("seed_{s}"));
        run_one(cfg, m, s, &data, &dir)
    };
    let workers = worker_count().min(jobs.len()).max(1);
    let results: Vec<Result<RunResult>> = if workers == 1 {
        jobs.iter().map(run).collect()
    } else {
        let mut slots: Vec<Option<Result<RunResult>>> = (0..jobs.len()).map(|_| None).collect();
        let chunk = jobs.len().div_ceil(workers);
        std::thread::scope(|scope| {
            for (js, out) in jobs.chunks(chunk).zip(slots.chunks_mut(chunk)) {
                let run = &run;
                scope.spawn(move || {
                    for (j, o) in js.iter().zip(out) {
                        *o = Some(run(j));
                    }
                });
            }
        });
        slots.into_iter().map(|r| r.expect("job ran")).collect()
    };
    let results: Vec<RunResult> = results.into_iter().collect::<Result<_>>()?;
    for &m in methods {
        let reports: Vec<MetricsReport> = results.iter().filter(|r| r.method == m).map(|r| r.report.clone()).collect();
        let agg = aggregate_runs(&reports)?;
        let dir = cfg.output_dir.join(method_dir(m));
        write(&dir.join("aggregate.json"), &to_json(&agg))?;
        write(&dir.join("aggregate.csv"), &aggregate_csv(&agg))?;
    }
    Ok(results)
}

/// The method whose networks a checkpoint holds.
pub fn infer_method(checkpoint: &Path) -> Result<Method> {
    let names: Vec<String> = read_checkpoint(checkpoint)?.into_iter().map(|t| t.name).collect();
    let has = |p: &str| names.iter().any(|n| n.starts_with(p));
    Ok(match (has("rnet."), has("dnet.")) {
        (true, true) => Method::RNetDNet,
        (true, false) => Method::RNet,
        (false, false) => Method::Baseline,
        (false, true) => {
            return Err(Error::format(checkpoint, "D-Net parameters without an R-Net"));
        }
    })
}

/// A model with the checkpoint's parameters; its shape comes from the config.
pub fn load_model(cfg: &ExperimentConfig, checkpoint: &Path, classes: usize) -> Result<ModelBundle<f32>> {
    if !checkpoint.exists() {
        return Err(Error::Input(format!("checkpoint {} does not exist", checkpoint.display())));
    }
    let method = infer_method(checkpoint)?;
    let mut bundle = ModelBundle::build(cfg.model.bundle_config(method, classes)?)?;
    load_checkpoint(&mut bundle.store, checkpoint)?;
    Ok(bundle)
}

/// Scores a checkpoint on the test split, writing reports to `out`.
pub fn evaluate(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<MetricsReport> {
    let (_, _, test) = load_splits(cfg)?;
    let bundle = load_model(cfg, checkpoint, test.class_count())?;
    let ev = evaluate_model(&bundle, &test)?;
    mkdir(out)?;
    write_evaluation(&ev, test.class_names(), out)?;
    Ok(ev.report)
}

/// Runs the gradient suite and renders one line per check.
pub fn gradcheck(seed: u64) -> Result<(Vec<SuiteEntry>, String)> {
    let entries = suite(seed)?;
    let mut s = String::new();
    for e in &entries {
        let _ = writeln!(
            s,
            "{} {:<28} max_rel_err {:.3e}",
            if e.report.passed { "ok  " } else { "FAIL" },
            e.name,
            e.report.max_rel_err()
        );
    }
    let failed = entries.iter().filter(|e| !e.report.passed).count();
    let _ = writeln!(s, "{} checks, {failed} failed", entries.len());
    Ok((entries, s))
}

/// Writes `<source_id>.pgm` holding the input and its reconstruction side by side
/// for the first `limit` test images. Returns the written paths.
pub fn reconstruct(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path, limit: usize) -> Result<Vec<PathBuf>> {
    let (_, _, test) = load_splits(cfg)?;
    let bundle = load_model(cfg, checkpoint, test.class_count())?;
    if bundle.rnet.is_none() {
        return Err(Error::Config("checkpoint has no R-Net to reconstruct with".into()));
    }
    mkdir(out)?;
    let m = bundle.image_size();
    let mut written = Vec::new();
    for it in test.items().iter().take(limit) {
        let x = it.image.resize_bilinear(m, m);
        let t = auxcnn_core::data::images_to_tensor(&[&x])?;
        let xhat = bundle.reconstruct(&bundle.extract_features(&t)?)?;
        let xhat = auxcnn_core::data::tensor_to_images(&xhat)?.remove(0);
        let path = out.join(format!("{}.pgm", it.source_id));
        Image::side_by_side(&[&x, &xhat]).save_pgm(&path)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub method: Method,
    pub aggregate: RunAggregate,
    /// One test per [`TESTED_METRICS`] entry against the baseline; empty for the baseline itself.
    pub tests: Vec<(&'static str, TTest)>,
}

/// Aggregates and one-sided tests (method > baseline) over finished runs.
pub fn compare_runs(runs: &[RunResult], baseline: Method) -> Result<Vec<Comparison>> {
    let mut methods: Vec<Method> = Vec::new();
    for r in runs {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    if methods.len() < 2 || !methods.contains(&baseline) {
        return Err(Error::Config(format!(
            "compare needs the baseline {} and at least one other method",
            baseline.name()
        )));
    }
    let values = |m: Method, metric: &str| -> Vec<f64> {
        runs.iter()
            .filter(|r| r.method == m)
            .filter_map(|r| r.report.scalars().into_iter().find(|(k, _)| *k == metric).map(|(_, v)| v))
            .collect()
    };
    let mut out = Vec::new();
    for &m in &methods {
        let reports: Vec<MetricsReport> = runs.iter().filter(|r| r.method == m).map(|r| r.report.clone()).collect();
        if reports.len() < 2 {
            return Err(Error::Config(format!("method {} has fewer than 2 repeats", m.name())));
        }
        let aggregate = aggregate_runs(&reports)?;
        let mut tests = Vec::new();
        if m != baseline {
            for metric in TESTED_METRICS {
                tests.push((metric, welch_ttest_one_sided(&values(m, metric), &values(baseline, metric))?));
            }
        }
        out.push(Comparison { method: m, aggregate, tests });
    }
    Ok(out)
}

pub fn compare_csv(cmp: &[Comparison]) -> String {
    let mut s = String::from("method,metric,mean,std\n");
    for c in cmp {
        for (k, v) in &c.aggregate.metrics {
            let _ = writeln!(s, "{},{k},{},{}", c.method.name(), v.mean, v.std);
        }
    }
    s
}

pub fn ttest_csv(cmp: &[Comparison], baseline: Method) -> String {
    let mut s = String::from("method,baseline,metric,t,df,p\n");
    for c in cmp {
        for (k, t) in &c.tests {
            let _ = writeln!(s, "{},{},{k},{},{},{}", c.method.name(), baseline.name(), t.t, t.df, t.p);
        }
    }
    s
}

/// Trains the baseline and every configured method, then writes `compare.csv`
/// and `ttest.csv` to the output directory.
pub fn compare(cfg: &ExperimentConfig) -> Result<Vec<Comparison>> {
    if cfg.repeats < 2 {
        return Err(Error::Config("compare needs repeats >= 2".into()));
    }
    let mut methods = vec![cfg.baseline];
    methods.extend(cfg.methods.iter().copied().filter(|&m| m != cfg.baseline));
    if methods.len() < 2 {
        return Err(Error::Config("compare needs at least two methods".into()));
    }
    let runs = train_methods(cfg, &methods)?;
    let cmp = compare_runs(&runs, cfg.baseline)?;
    write(&cfg.output_dir.join("compare.csv"), &compare_csv(&cmp))?;
    write(&cfg.output_dir.join("ttest.csv"), &ttest_csv(&cmp, cfg.baseline))?;
    Ok(cmp)
}
