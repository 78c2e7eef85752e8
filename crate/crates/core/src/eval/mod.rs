//! Confusion-matrix metrics, ROC analysis, run aggregation and the one-sided
//! Welch test.

mod report;

use std::collections::BTreeMap;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub use report::{write_metrics_csv, write_metrics_json, write_roc_csv};

/// Rows are ground truth, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if classes < 1 || counts.len() != classes * classes {
            return Err(Error::Input(format!(
                "{} counts for a {classes}x{classes} matrix",
                counts.len()
            )));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes).map(<[u64]>::to_vec).collect()
    }

    pub fn scaled(&self, c: u64) -> Self {
        ConfusionMatrix {
            classes: self.classes,
            counts: self.counts.iter().map(|v| v * c).collect(),
        }
    }
}

pub fn confusion_matrix(predictions: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut counts = vec![0u64; classes * classes];
    for (&p, &g) in predictions.iter().zip(labels) {
        if p >= classes || g >= classes {
            return Err(Error::Input(format!(
                "class index (truth {g}, prediction {p}) outside [0, {classes})"
            )));
        }
        counts[g * classes + p] += 1;
    }
    ConfusionMatrix::from_counts(classes, counts)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub samples: u64,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: ClassMetrics,
    pub auc: Option<f64>,
    pub confusion: Vec<Vec<u64>>,
    /// Degenerate ratios that were set to 0.
    pub warnings: Vec<String>,
}

impl MetricsReport {
    /// Named scalar metrics, in a fixed order.
    pub fn scalars(&self) -> Vec<(&'static str, f64)> {
        let mut v = vec![
            ("accuracy", self.accuracy),
            ("precision", self.macro_avg.precision),
            ("sensitivity", self.macro_avg.sensitivity),
            ("specificity", self.macro_avg.specificity),
            ("f1", self.macro_avg.f1),
        ];
        if let Some(a) = self.auc {
            v.push(("auc", a));
        }
        v
    }
}

fn ratio(num: u64, den: u64, what: &str, class: usize, warnings: &mut Vec<String>) -> f64 {
    if den == 0 {
        warnings.push(format!("class {class}: {what} is 0/0, reported as 0"));
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest metrics per class and their unweighted means.
pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Input("confusion matrix is empty".into()));
    }
    let k = cm.classes();
    let mut warnings = Vec::new();
    let mut per_class = Vec::with_capacity(k);
    let mut correct = 0;
    for c in 0..k {
        let tp = cm.get(c, c);
        correct += tp;
        let predicted: u64 = (0..k).map(|g| cm.get(g, c)).sum();
        let actual: u64 = (0..k).map(|p| cm.get(c, p)).sum();
        let (fp, fn_) = (predicted - tp, actual - tp);
        let tn = total - tp - fp - fn_;
        let precision = ratio(tp, tp + fp, "precision", c, &mut warnings);
        let sensitivity = ratio(tp, tp + fn_, "sensitivity", c, &mut warnings);
        let specificity = ratio(tn, tn + fp, "specificity", c, &mut warnings);
        let f1 = if precision + sensitivity == 0.0 {
            warnings.push(format!("class {c}: F1 is 0/0, reported as 0"));
            0.0
        } else {
            2.0 * precision * sensitivity / (precision + sensitivity)
        };
        per_class.push(ClassMetrics {
            precision,
            sensitivity,
            specificity,
            f1,
        });
    }
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
    let macro_avg = ClassMetrics {
        precision: mean(|m| m.precision),
        sensitivity: mean(|m| m.sensitivity),
        specificity: mean(|m| m.specificity),
        f1: mean(|m| m.f1),
    };
    Ok(MetricsReport {
        samples: total,
        accuracy: correct as f64 / total as f64,
        per_class,
        macro_avg,
        auc: None,
        confusion: cm.rows(),
        warnings,
    })
}

fn check_binary(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Input("scores and labels differ in length".into()));
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::Input("ROC analysis needs both classes present".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("ROC scores".into()));
    }
    Ok(())
}

/// Rank-based AUC: the probability that a random positive outscores a random
/// negative, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_binary(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average ranks (1-based) over tie groups.
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    Ok((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive.
    pub threshold: f64,
}

/// Operating points from the strictest threshold (nothing positive) down to
/// the lowest distinct score.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    check_binary(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let mut pts = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        pts.push(RocPoint {
            fpr: fp / n_neg,
            tpr: tp / n_pos,
            threshold: s,
        });
    }
    Ok(pts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// One-sided p-value for `mean(a) > mean(b)`.
    pub p: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Welch's unequal-variance t-test, one-sided for `mean(a) > mean(b)`.
/// With both variances zero the p-value is 0.5 for equal means and 0 or 1 otherwise.
pub fn welch_ttest_one_sided(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Input("each sample needs at least 2 values".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-test sample".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let (t, p) = if ma == mb {
            (0.0, 0.5)
        } else if ma > mb {
            (f64::INFINITY, 0.0)
        } else {
            (f64::NEG_INFINITY, 1.0)
        };
        return Ok(TTest {
            t,
            df: na + nb - 2.0,
            p,
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Input(format!("t distribution: {e}")))?;
    Ok(TTest { t, df, p: dist.sf(t) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunAggregate {
    pub runs: usize,
    pub metrics: BTreeMap<String, MeanStd>,
    /// Raw per-run values, in run order.
    pub values: BTreeMap<String, Vec<f64>>,
}

pub fn mean_std(x: &[f64]) -> MeanStd {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

pub fn aggregate_runs(reports: &[MetricsReport]) -> Result<RunAggregate> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Input("no runs to aggregate".into()))?;
    let k = first.per_class.len();
    if reports.iter().any(|r| r.per_class.len() != k) {
        return Err(Error::Input("runs disagree on the number of classes".into()));
    }
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (name, v) in r.scalars() {
            values.entry(name.to_string()).or_default().push(v);
        }
    }
    values.retain(|_, v| v.len() == reports.len());
    let metrics = values.iter().map(|(k, v)| (k.clone(), mean_std(v))).collect();
    Ok(RunAggregate {
        runs: reports.len(),
        metrics,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn confusion_examples() {
        let cm = confusion_matrix(&[0, 1, 0], &[0, 1, 1], 2).unwrap();
        assert_eq!(cm.rows(), vec![vec![1, 0], vec![1, 1]]);
        assert!(confusion_matrix(&[2], &[0], 2).is_err());
        let cm = confusion_matrix(&[0, 0, 0], &[0, 1, 2], 3).unwrap();
        assert_eq!(cm.rows(), vec![vec![1, 0, 0], vec![1, 0, 0], vec![1, 0, 0]]);
    }

    #[test]
    fn metric_formulas() {
        let cm = ConfusionMatrix::from_counts(2, vec![50, 10, 5, 35]).unwrap();
        let r = classification_metrics(&cm).unwrap();
        let c0 = r.per_class[0];
        assert_abs_diff_eq!(c0.precision, 50.0 / 55.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c0.sensitivity, 50.0 / 60.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c0.specificity, 35.0 / 40.0, epsilon = 1e-15);
        let p = 50.0 / 55.0;
        let s = 50.0 / 60.0;
        assert_abs_diff_eq!(c0.f1, 2.0 * p * s / (p + s), epsilon = 1e-15);
        assert_abs_diff_eq!(c0.f1, 0.8696, epsilon = 1e-4);
        assert_eq!(r.accuracy, 0.85);
        assert_eq!(classification_metrics(&cm.scaled(7)).unwrap().per_class, r.per_class);
    }

    #[test]
    fn diagonal_and_degenerate() {
        let cm = ConfusionMatrix::from_counts(2, vec![3, 0, 0, 4]).unwrap();
        let r = classification_metrics(&cm).unwrap();
        assert_eq!(r.macro_avg, ClassMetrics { precision: 1.0, sensitivity: 1.0, specificity: 1.0, f1: 1.0 });
        let cm = ConfusionMatrix::from_counts(3, vec![2, 0, 0, 0, 2, 0, 0, 0, 0]).unwrap();
        let r = classification_metrics(&cm).unwrap();
        assert_eq!(r.per_class[2].precision, 0.0);
        assert_eq!(r.per_class[2].f1, 0.0);
        assert!(!r.warnings.is_empty());
        assert!(classification_metrics(&ConfusionMatrix::from_counts(2, vec![0; 4]).unwrap()).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.4, 0.3], &[true, false, true, false]).unwrap(), 0.75);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn roc_curve_ends_at_one() {
        let pts = roc_curve(&[0.9, 0.8, 0.4, 0.3], &[true, false, true, false]).unwrap();
        assert_eq!(pts.len(), 5);
        let last = pts.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        // Trapezoid area equals the rank statistic.
        let area: f64 = pts.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum();
        assert_abs_diff_eq!(area, 0.75, epsilon = 1e-15);
    }

    #[test]
    fn welch_examples() {
        let a = [0.9, 0.91, 0.95];
        let r = welch_ttest_one_sided(&a, &a).unwrap();
        assert_eq!((r.t, r.p), (0.0, 0.5));
        let r = welch_ttest_one_sided(&[1.0, 1.0, 1.0001], &[0.0, 0.0, 0.0001]).unwrap();
        assert!(r.p < 0.01);
        let b = [0.88, 0.92, 0.9];
        let ab = welch_ttest_one_sided(&a, &b).unwrap().p;
        let ba = welch_ttest_one_sided(&b, &a).unwrap().p;
        assert_abs_diff_eq!(ab + ba, 1.0, epsilon = 1e-12);
        assert!(welch_ttest_one_sided(&[1.0], &b).is_err());
        assert_eq!(welch_ttest_one_sided(&[1.0, 1.0], &[1.0, 1.0]).unwrap().p, 0.5);
    }

    #[test]
    fn aggregation() {
        let cm = ConfusionMatrix::from_counts(2, vec![3, 1, 0, 4]).unwrap();
        let r = classification_metrics(&cm).unwrap();
        let agg = aggregate_runs(std::slice::from_ref(&r)).unwrap();
        assert!(agg.metrics.values().all(|m| m.std == 0.0));
        let ms = mean_std(&[0.90, 0.92, 0.94]);
        assert_abs_diff_eq!(ms.mean, 0.92, epsilon = 1e-12);
        assert_abs_diff_eq!(ms.std, (0.0008f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(ms.std, 0.0163, epsilon = 1e-4);
        assert!(aggregate_runs(&[]).is_err());
        let cm3 = ConfusionMatrix::from_counts(3, vec![1, 0, 0, 0, 1, 0, 0, 0, 1]).unwrap();
        let r3 = classification_metrics(&cm3).unwrap();
        assert!(aggregate_runs(&[r, r3]).is_err());
    }
}
