//! Binary-classification metrics: confusion matrix, the five-metric
//! report (per positive class and macro-averaged), and PR/ROC curves.
//!
//! Conventions, fixed and recorded in the CSV output: a sample is
//! predicted positive iff score ≥ threshold; macro rows average the two
//! per-class values, with macro F1 the harmonic mean of macro precision
//! and macro recall; undefined ratios are reported as 0 and flagged.

pub mod curves;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use curves::{pr_curve, roc_curve, write_curve_csv, Curve, CurveKind, CurvePoint};

/// Counts with malignant (label 1) as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.true_positives + self.false_positives + self.false_negatives + self.true_negatives
    }
}

fn validate_scores(scores: &[f64], labels: &[usize]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::validation("empty score list"));
    }
    if let Some(s) = scores
        .iter()
        .find(|s| !s.is_finite() || **s < 0.0 || **s > 1.0)
    {
        return Err(Error::validation(format!("score {s} outside [0, 1]")));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::validation(format!("label {l} is not binary")));
    }
    Ok(())
}

/// Tallies predictions at a threshold: predicted positive ⇔ score ≥ t.
pub fn confusion(scores: &[f64], labels: &[usize], threshold: f64) -> Result<ConfusionMatrix> {
    validate_scores(scores, labels)?;
    let mut cm = ConfusionMatrix {
        true_positives: 0,
        false_positives: 0,
        false_negatives: 0,
        true_negatives: 0,
    };
    for (&s, &y) in scores.iter().zip(labels.iter()) {
        let predicted_positive = s >= threshold;
        match (predicted_positive, y == 1) {
            (true, true) => cm.true_positives += 1,
            (true, false) => cm.false_positives += 1,
            (false, true) => cm.false_negatives += 1,
            (false, false) => cm.true_negatives += 1,
        }
    }
    Ok(cm)
}

/// A ratio that may have had a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    /// True when the denominator was zero and 0 was reported.
    pub degenerate: bool,
}

impl MetricValue {
    fn ratio(num: usize, den: usize) -> Self {
        if den == 0 {
            Self {
                value: 0.0,
                degenerate: true,
            }
        } else {
            Self {
                value: num as f64 / den as f64,
                degenerate: false,
            }
        }
    }

    fn harmonic(p: MetricValue, r: MetricValue) -> Self {
        if p.degenerate || r.degenerate || p.value + r.value == 0.0 {
            Self {
                value: 0.0,
                degenerate: true,
            }
        } else {
            Self {
                value: 2.0 * p.value * r.value / (p.value + r.value),
                degenerate: false,
            }
        }
    }

    fn mean(a: MetricValue, b: MetricValue) -> Self {
        Self {
            value: (a.value + b.value) / 2.0,
            degenerate: a.degenerate || b.degenerate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub accuracy: MetricValue,
    pub precision: MetricValue,
    pub recall: MetricValue,
    pub specificity: MetricValue,
    pub f1: MetricValue,
}

/// The five metrics, reported twice: for the positive class and
/// macro-averaged over both classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub positive: MetricsRow,
    pub macro_avg: MetricsRow,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::validation("empty confusion matrix"));
    }
    let (tp, fp, fneg, tn) = (
        cm.true_positives,
        cm.false_positives,
        cm.false_negatives,
        cm.true_negatives,
    );
    let accuracy = MetricValue::ratio(tp + tn, total);

    let p_pos = MetricValue::ratio(tp, tp + fp);
    let r_pos = MetricValue::ratio(tp, tp + fneg);
    let s_pos = MetricValue::ratio(tn, tn + fp);
    let f1_pos = MetricValue::harmonic(p_pos, r_pos);

    // the negative class seen as "positive"
    let p_neg = MetricValue::ratio(tn, tn + fneg);
    let r_neg = MetricValue::ratio(tn, tn + fp);
    let s_neg = MetricValue::ratio(tp, tp + fneg);

    let p_macro = MetricValue::mean(p_pos, p_neg);
    let r_macro = MetricValue::mean(r_pos, r_neg);
    let s_macro = MetricValue::mean(s_pos, s_neg);

    Ok(MetricsReport {
        positive: MetricsRow {
            accuracy,
            precision: p_pos,
            recall: r_pos,
            specificity: s_pos,
            f1: f1_pos,
        },
        macro_avg: MetricsRow {
            accuracy,
            precision: p_macro,
            recall: r_macro,
            specificity: s_macro,
            f1: MetricValue::harmonic(p_macro, r_macro),
        },
    })
}

/// Metrics CSV: one row per averaging scheme, with the threshold
/// convention and raw counts alongside.
pub fn write_metrics_csv(
    report: &MetricsReport,
    cm: &ConfusionMatrix,
    threshold: f64,
    path: &Path,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "averaging",
        "threshold_rule",
        "threshold",
        "accuracy",
        "precision",
        "recall",
        "specificity",
        "f1",
        "degenerate",
        "tp",
        "fp",
        "fn",
        "tn",
    ])?;
    for (name, row) in [("positive", &report.positive), ("macro", &report.macro_avg)] {
        let degenerate: Vec<&str> = [
            ("precision", row.precision.degenerate),
            ("recall", row.recall.degenerate),
            ("specificity", row.specificity.degenerate),
            ("f1", row.f1.degenerate),
        ]
        .iter()
        .filter(|(_, d)| *d)
        .map(|(n, _)| *n)
        .collect();
        w.write_record([
            name.to_string(),
            "score>=threshold".to_string(),
            format!("{threshold}"),
            format!("{:.6}", row.accuracy.value),
            format!("{:.6}", row.precision.value),
            format!("{:.6}", row.recall.value),
            format!("{:.6}", row.specificity.value),
            format!("{:.6}", row.f1.value),
            degenerate.join("+"),
            cm.true_positives.to_string(),
            cm.false_positives.to_string(),
            cm.false_negatives.to_string(),
            cm.true_negatives.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
