//! PR and ROC curves over the full threshold sweep.
//!
//! Thresholds are the unique scores in descending order plus a sentinel
//! above the maximum, so a curve always has (unique scores + 1) points.
//! Equal scores move together. ROC AUC uses the trapezoidal rule; PR AUC
//! uses step interpolation (precision held right-constant between
//! achieved recall levels).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Pr,
    Roc,
}

impl CurveKind {
    pub fn name(self) -> &'static str {
        match self {
            CurveKind::Pr => "pr",
            CurveKind::Roc => "roc",
        }
    }

    /// The AUC convention recorded in output metadata.
    pub fn auc_convention(self) -> &'static str {
        match self {
            CurveKind::Pr => "step_interpolation",
            CurveKind::Roc => "trapezoidal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
    /// Decision threshold producing this point; infinite at the sentinel.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub kind: CurveKind,
    pub points: Vec<CurvePoint>,
    pub auc: f64,
}

fn validate(scores: &[f64], labels: &[usize]) -> Result<(usize, usize)> {
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
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    Ok((pos, neg))
}

/// (threshold, cumulative tp, cumulative fp) per unique score, descending.
fn sweep(scores: &[f64], labels: &[usize]) -> Vec<(f64, usize, usize)> {
    let mut pairs: Vec<(f64, usize)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite scores"));
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < pairs.len() {
        let t = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == t {
            if pairs[i].1 == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((t, tp, fp));
    }
    out
}

/// ROC curve: x = false-positive rate, y = true-positive rate.
pub fn roc_curve(scores: &[f64], labels: &[usize]) -> Result<Curve> {
    let (pos, neg) = validate(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::validation(
            "ROC needs at least one positive and one negative label",
        ));
    }
    let mut points = vec![CurvePoint {
        x: 0.0,
        y: 0.0,
        threshold: f64::INFINITY,
    }];
    for (t, tp, fp) in sweep(scores, labels) {
        points.push(CurvePoint {
            x: fp as f64 / neg as f64,
            y: tp as f64 / pos as f64,
            threshold: t,
        });
    }
    let mut auc = 0.0;
    for w in points.windows(2) {
        auc += (w[1].x - w[0].x) * (w[0].y + w[1].y) / 2.0;
    }
    Ok(Curve {
        kind: CurveKind::Roc,
        points,
        auc,
    })
}

/// PR curve: x = recall, y = precision.
pub fn pr_curve(scores: &[f64], labels: &[usize]) -> Result<Curve> {
    let (pos, _) = validate(scores, labels)?;
    if pos == 0 {
        return Err(Error::validation("PR needs at least one positive label"));
    }
    // precision at zero predictions is 1 by convention
    let mut points = vec![CurvePoint {
        x: 0.0,
        y: 1.0,
        threshold: f64::INFINITY,
    }];
    for (t, tp, fp) in sweep(scores, labels) {
        points.push(CurvePoint {
            x: tp as f64 / pos as f64,
            y: tp as f64 / (tp + fp) as f64,
            threshold: t,
        });
    }
    let mut auc = 0.0;
    for w in points.windows(2) {
        auc += (w[1].x - w[0].x) * w[1].y;
    }
    Ok(Curve {
        kind: CurveKind::Pr,
        points,
        auc,
    })
}

/// Curve CSV: header metadata row comments are avoided; the AUC and
/// convention ride along every row for self-description.
pub fn write_curve_csv(curve: &Curve, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["kind", "x", "y", "threshold", "auc", "auc_convention"])?;
    for p in &curve.points {
        w.write_record([
            curve.kind.name().to_string(),
            format!("{:.9}", p.x),
            format!("{:.9}", p.y),
            if p.threshold.is_infinite() {
                "inf".to_string()
            } else {
                format!("{:.9}", p.threshold)
            },
            format!("{:.9}", curve.auc),
            curve.kind.auc_convention().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::stream;
    use rand::Rng;

    #[test]
    fn perfect_separation_has_unit_auc() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [1, 1, 0, 0];
        assert!((roc_curve(&scores, &labels).unwrap().auc - 1.0).abs() < 1e-12);
        assert!((pr_curve(&scores, &labels).unwrap().auc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_scores_give_chance_diagonal_and_prevalence() {
        let scores = [0.5; 10];
        let labels = [1, 0, 0, 0, 1, 0, 0, 0, 0, 0];
        let roc = roc_curve(&scores, &labels).unwrap();
        assert_eq!(roc.points.len(), 2); // sentinel + one threshold
        assert!((roc.auc - 0.5).abs() < 1e-12);
        assert_eq!((roc.points[1].x, roc.points[1].y), (1.0, 1.0));

        let pr = pr_curve(&scores, &labels).unwrap();
        assert_eq!(pr.points.len(), 2);
        assert!((pr.auc - 0.2).abs() < 1e-12); // prevalence
        assert!((pr.points[1].y - 0.2).abs() < 1e-12);
    }

    #[test]
    fn roc_rejects_single_class() {
        assert!(roc_curve(&[0.1, 0.9], &[1, 1]).is_err());
        assert!(pr_curve(&[0.1, 0.9], &[0, 0]).is_err());
    }

    /// Mann-Whitney pairwise statistic: fraction of (positive, negative)
    /// pairs ranked correctly, ties counting one half.
    fn mann_whitney(scores: &[f64], labels: &[usize]) -> f64 {
        let mut wins = 0.0f64;
        let mut pairs = 0.0f64;
        for (i, (&si, &li)) in scores.iter().zip(labels).enumerate() {
            if li != 1 {
                continue;
            }
            for (j, (&sj, &lj)) in scores.iter().zip(labels).enumerate() {
                if i == j || lj != 0 {
                    continue;
                }
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    /// Exhaustive threshold enumeration with a per-sample tally at each
    /// threshold, then the same step summation.
    fn pr_auc_enumeration(scores: &[f64], labels: &[usize]) -> f64 {
        let mut uniq: Vec<f64> = scores.to_vec();
        uniq.sort_by(|a, b| b.partial_cmp(a).unwrap());
        uniq.dedup();
        let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
        let mut auc = 0.0;
        let mut prev_recall = 0.0;
        for &t in &uniq {
            let (mut tp, mut fp) = (0usize, 0usize);
            for (&s, &y) in scores.iter().zip(labels) {
                if s >= t {
                    if y == 1 {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            let recall = tp as f64 / pos;
            let precision = tp as f64 / (tp + fp) as f64;
            auc += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        auc
    }

    #[test]
    fn roc_auc_equals_mann_whitney_on_random_data() {
        let mut rng = stream(41, "curves-test", &[]);
        for round in 0..30 {
            let n = rng.random_range(5..=100);
            // quantize some rounds to force ties
            let quantize = round % 2 == 0;
            let scores: Vec<f64> = (0..n)
                .map(|_| {
                    let s: f64 = rng.random_range(0.0..=1.0);
                    if quantize {
                        (s * 8.0).round() / 8.0
                    } else {
                        s
                    }
                })
                .collect();
            let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
            labels[0] = 1;
            labels[n - 1] = 0;
            let auc = roc_curve(&scores, &labels).unwrap().auc;
            let mw = mann_whitney(&scores, &labels);
            assert!((auc - mw).abs() < 1e-9, "auc {auc} vs mw {mw}");
        }
    }

    #[test]
    fn pr_auc_equals_exhaustive_enumeration_on_random_data() {
        let mut rng = stream(42, "curves-test", &[]);
        for round in 0..30 {
            let n = rng.random_range(3..=100);
            let quantize = round % 2 == 1;
            let scores: Vec<f64> = (0..n)
                .map(|_| {
                    let s: f64 = rng.random_range(0.0..=1.0);
                    if quantize {
                        (s * 4.0).round() / 4.0
                    } else {
                        s
                    }
                })
                .collect();
            let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
            labels[0] = 1;
            let auc = pr_curve(&scores, &labels).unwrap().auc;
            let oracle = pr_auc_enumeration(&scores, &labels);
            assert!((auc - oracle).abs() < 1e-9, "auc {auc} vs oracle {oracle}");
        }
    }

    #[test]
    fn point_count_is_unique_scores_plus_one() {
        let scores = [0.3, 0.3, 0.7, 0.9, 0.9, 0.1];
        let labels = [0, 1, 0, 1, 1, 0];
        let roc = roc_curve(&scores, &labels).unwrap();
        let pr = pr_curve(&scores, &labels).unwrap();
        assert_eq!(roc.points.len(), 5);
        assert_eq!(pr.points.len(), 5);
    }

    #[test]
    fn curve_x_is_non_decreasing() {
        let mut rng = stream(43, "curves-test", &[]);
        let scores: Vec<f64> = (0..200)
            .map(|_| (rng.random_range(0.0..=1.0f64) * 16.0).round() / 16.0)
            .collect();
        let mut labels: Vec<usize> = (0..200).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 1;
        labels[1] = 0;
        for curve in [
            roc_curve(&scores, &labels).unwrap(),
            pr_curve(&scores, &labels).unwrap(),
        ] {
            for w in curve.points.windows(2) {
                assert!(w[1].x >= w[0].x);
            }
        }
    }

    #[test]
    fn roc_auc_is_invariant_under_monotone_transforms() {
        let mut rng = stream(44, "curves-test", &[]);
        let scores: Vec<f64> = (0..60).map(|_| rng.random_range(0.0..=1.0)).collect();
        let mut labels: Vec<usize> = (0..60).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 1;
        labels[1] = 0;
        let base = roc_curve(&scores, &labels).unwrap().auc;
        let squashed: Vec<f64> = scores.iter().map(|s| s.powi(3)).collect();
        let transformed = roc_curve(&squashed, &labels).unwrap().auc;
        assert!((base - transformed).abs() < 1e-12);
    }
}
