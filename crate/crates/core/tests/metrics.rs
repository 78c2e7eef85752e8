use auxcnn_core::eval::{
    aggregate_runs, classification_metrics, confusion_matrix, roc_auc, roc_curve, welch_ttest_one_sided,
    write_metrics_csv, ConfusionMatrix,
};
use proptest::prelude::*;

#[test]
fn perfect_classifier_scores_one() {
    let labels = [0, 1, 2, 2, 1, 0];
    let r = classification_metrics(&confusion_matrix(&labels, &labels, 3).unwrap()).unwrap();
    assert_eq!(r.accuracy, 1.0);
    assert_eq!(r.macro_avg.f1, 1.0);
    assert_eq!(r.macro_avg.specificity, 1.0);
    assert!(r.warnings.is_empty());
}

#[test]
fn empty_class_warns_and_reports_zero() {
    let r = classification_metrics(&confusion_matrix(&[0, 0], &[0, 0], 2).unwrap()).unwrap();
    assert_eq!(r.per_class[1].precision, 0.0);
    assert_eq!(r.per_class[1].sensitivity, 0.0);
    assert!(!r.warnings.is_empty());
}

#[test]
fn roc_curve_spans_corners() {
    let s = [0.1, 0.4, 0.35, 0.8];
    let y = [false, false, true, true];
    let pts = roc_curve(&s, &y).unwrap();
    assert_eq!((pts[0].fpr, pts[0].tpr), (0.0, 0.0));
    assert!(pts[0].threshold.is_infinite());
    let last = pts.last().unwrap();
    assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    assert_eq!(roc_auc(&s, &y).unwrap(), 0.75);
    assert!(roc_auc(&s, &[true; 4]).is_err());
}

#[test]
fn one_sided_welch() {
    let hi = [0.91, 0.93, 0.92];
    let lo = [0.85, 0.86, 0.84];
    assert!(welch_ttest_one_sided(&hi, &lo).unwrap().p < 0.01);
    assert!(welch_ttest_one_sided(&lo, &hi).unwrap().p > 0.99);
    assert_eq!(welch_ttest_one_sided(&hi, &hi).unwrap().p, 0.5);
    assert!(welch_ttest_one_sided(&hi[..1], &lo).is_err());
}

#[test]
fn aggregate_uses_population_std() {
    let a = classification_metrics(&ConfusionMatrix::from_counts(2, vec![5, 0, 0, 5]).unwrap()).unwrap();
    let b = classification_metrics(&ConfusionMatrix::from_counts(2, vec![5, 0, 5, 0]).unwrap()).unwrap();
    let agg = aggregate_runs(&[a, b]).unwrap();
    let acc = agg.metrics["accuracy"];
    assert_eq!((acc.mean, acc.std), (0.75, 0.25));
    assert_eq!(agg.values["accuracy"], vec![1.0, 0.5]);
}

#[test]
fn metrics_csv_layout() {
    let r = classification_metrics(&ConfusionMatrix::from_counts(2, vec![3, 1, 2, 4]).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.csv");
    write_metrics_csv(&r, &["neg".into(), "pos".into()], &p).unwrap();
    let text = std::fs::read_to_string(p).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "scope,precision,sensitivity,specificity,f1,accuracy,auc");
    assert!(lines[1].starts_with("neg,") && lines[2].starts_with("pos,") && lines[3].starts_with("macro,"));
}

proptest! {
    #[test]
    fn metrics_ignore_sample_order(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..60), rot in 0usize..60) {
        let (y, p): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let mut pairs2 = pairs.clone();
        pairs2.rotate_left(rot % pairs.len());
        let (y2, p2): (Vec<usize>, Vec<usize>) = pairs2.into_iter().unzip();
        let a = classification_metrics(&confusion_matrix(&p, &y, 3).unwrap()).unwrap();
        let b = classification_metrics(&confusion_matrix(&p2, &y2, 3).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn scaling_counts_keeps_ratios(counts in prop::collection::vec(1u64..20, 4), c in 2u64..9) {
        let cm = ConfusionMatrix::from_counts(2, counts).unwrap();
        let a = classification_metrics(&cm).unwrap();
        let b = classification_metrics(&cm.scaled(c)).unwrap();
        prop_assert!((a.macro_avg.f1 - b.macro_avg.f1).abs() < 1e-12);
        prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
        prop_assert_eq!(b.samples, a.samples * c);
    }

    #[test]
    fn auc_is_invariant_to_monotone_maps(scores in prop::collection::vec(0.0f64..1.0, 4..40), seed in 0u64..1000) {
        let labels: Vec<bool> = (0..scores.len()).map(|i| (i as u64 * 7 + seed).is_multiple_of(3)).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 1.0).collect();
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        let a = roc_auc(&scores, &labels).unwrap();
        prop_assert!((a - roc_auc(&mapped, &labels).unwrap()).abs() < 1e-12);
        prop_assert!((a + roc_auc(&flipped, &labels).unwrap() - 1.0).abs() < 1e-12);
    }
}
