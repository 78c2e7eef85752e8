use std::fmt::Write as _;
use std::path::Path;

use super::{MetricsReport, RocPoint};
use crate::error::{Error, Result};

pub fn write_metrics_json(report: &MetricsReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::format(path, e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// One row per class plus a `macro` row; accuracy and AUC repeat on every row.
pub fn write_metrics_csv(report: &MetricsReport, class_names: &[String], path: &Path) -> Result<()> {
    let mut text = String::from("scope,precision,sensitivity,specificity,f1,accuracy,auc\n");
    let auc = report.auc.map(|a| a.to_string()).unwrap_or_default();
    let rows = report
        .per_class
        .iter()
        .enumerate()
        .map(|(i, m)| (class_names.get(i).cloned().unwrap_or_else(|| i.to_string()), m))
        .chain(std::iter::once(("macro".to_string(), &report.macro_avg)));
    for (name, m) in rows {
        let _ = writeln!(
            text,
            "{name},{},{},{},{},{},{auc}",
            m.precision, m.sensitivity, m.specificity, m.f1, report.accuracy
        );
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_roc_csv(points: &[RocPoint], path: &Path) -> Result<()> {
    let mut text = String::from("fpr,tpr,threshold\n");
    for p in points {
        let _ = writeln!(text, "{},{},{}", p.fpr, p.tpr, p.threshold);
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
