//! Imbalance-aware evaluation, micro-averaged over every station-day.
//!
//! Zero denominators give 0: precision when nothing is predicted positive,
//! recall when nothing is positive, F1 when precision and recall are both 0.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("{labels} labels but {scores} scores")]
    LengthMismatch { labels: usize, scores: usize },
    #[error("empty input")]
    Empty,
    #[error("ROC needs both classes present")]
    SingleClassInput,
    #[error("precision-recall needs at least one positive")]
    NoPositives,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn check(y: &[f64], scores: &[f64]) -> Result<(), MetricsError> {
    if y.len() != scores.len() {
        return Err(MetricsError::LengthMismatch {
            labels: y.len(),
            scores: scores.len(),
        });
    }
    if y.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Labels are positive when `≥ 0.5`; predictions are positive when
/// `score ≥ threshold`.
pub fn confusion(y: &[f64], scores: &[f64], threshold: f64) -> Result<ConfusionCounts, MetricsError> {
    check(y, scores)?;
    let mut c = ConfusionCounts::default();
    for (&label, &s) in y.iter().zip(scores) {
        match (label >= 0.5, s >= threshold) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScalarMetrics {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub tnr: f64,
    pub f1: f64,
}

pub fn scalar_metrics(c: &ConfusionCounts) -> ScalarMetrics {
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let tnr = ratio(tn, tn + fp);
    ScalarMetrics {
        accuracy: ratio(tp + tn, tp + tn + fp + fn_),
        balanced_accuracy: (recall + tnr) / 2.0,
        precision,
        recall,
        tnr,
        f1: ratio(2.0 * precision * recall, precision + recall),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub precision: f64,
    pub recall: f64,
}

/// One point per distinct score, thresholds descending; equal scores enter
/// together.
pub fn curve(y: &[f64], scores: &[f64]) -> Result<Vec<CurvePoint>, MetricsError> {
    check(y, scores)?;
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let pos = y.iter().filter(|&&v| v >= 0.5).count() as f64;
    let neg = y.len() as f64 - pos;
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut out = Vec::new();
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if y[order[k]] >= 0.5 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            k += 1;
        }
        out.push(CurvePoint {
            threshold: s,
            fpr: ratio(fp, neg),
            tpr: ratio(tp, pos),
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, pos),
        });
    }
    Ok(out)
}

/// ROC curve and its trapezoidal area, starting from the origin.
pub fn roc_auc(y: &[f64], scores: &[f64]) -> Result<(Vec<CurvePoint>, f64), MetricsError> {
    let points = curve(y, scores)?;
    let pos = y.iter().filter(|&&v| v >= 0.5).count();
    if pos == 0 || pos == y.len() {
        return Err(MetricsError::SingleClassInput);
    }
    let (mut auc, mut px, mut py) = (0.0, 0.0, 0.0);
    for p in &points {
        auc += (p.fpr - px) * (p.tpr + py) / 2.0;
        px = p.fpr;
        py = p.tpr;
    }
    Ok((points, auc))
}

/// Precision-recall curve and step-wise average precision
/// `Σ (R_k − R_{k−1})·P_k`.
pub fn pr_curve_ap(y: &[f64], scores: &[f64]) -> Result<(Vec<CurvePoint>, f64), MetricsError> {
    let points = curve(y, scores)?;
    if !y.iter().any(|&v| v >= 0.5) {
        return Err(MetricsError::NoPositives);
    }
    let (mut ap, mut prev_r) = (0.0, 0.0);
    for p in &points {
        ap += (p.recall - prev_r) * p.precision;
        prev_r = p.recall;
    }
    Ok((points, ap))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub tnr: f64,
    pub f1: f64,
    /// `None` when only one class is present.
    pub auc_roc: Option<f64>,
    /// `None` when there are no positives.
    pub average_precision: Option<f64>,
}

pub fn evaluate(y: &[f64], scores: &[f64], threshold: f64) -> Result<MetricsReport, MetricsError> {
    let counts = confusion(y, scores, threshold)?;
    let m = scalar_metrics(&counts);
    Ok(MetricsReport {
        threshold,
        counts,
        accuracy: m.accuracy,
        balanced_accuracy: m.balanced_accuracy,
        precision: m.precision,
        recall: m.recall,
        tnr: m.tnr,
        f1: m.f1,
        auc_roc: roc_auc(y, scores).ok().map(|r| r.1),
        average_precision: pr_curve_ap(y, scores).ok().map(|r| r.1),
    })
}

/// Confusion counts and scalar metrics at each threshold.
pub fn threshold_sweep(
    y: &[f64],
    scores: &[f64],
    thresholds: &[f64],
) -> Result<Vec<(f64, ConfusionCounts, ScalarMetrics)>, MetricsError> {
    thresholds
        .iter()
        .map(|&t| {
            let c = confusion(y, scores, t)?;
            Ok((t, c, scalar_metrics(&c)))
        })
        .collect()
}

/// Per-station reports for arrays laid out with the station index fastest.
pub fn per_station(
    y: &[f64],
    scores: &[f64],
    n_stations: usize,
    threshold: f64,
) -> Result<Vec<MetricsReport>, MetricsError> {
    check(y, scores)?;
    (0..n_stations)
        .map(|s| {
            let ys: Vec<f64> = y.iter().skip(s).step_by(n_stations).copied().collect();
            let ps: Vec<f64> = scores.iter().skip(s).step_by(n_stations).copied().collect();
            evaluate(&ys, &ps, threshold)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_counting() {
        let c = confusion(&[1.0, 0.0, 1.0, 0.0], &[0.9, 0.1, 0.2, 0.8], 0.5).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, tn: 1, fp: 1, fn_: 1 });
        let m = scalar_metrics(&c);
        assert_eq!(
            [m.accuracy, m.precision, m.recall, m.balanced_accuracy, m.f1],
            [0.5; 5]
        );
        let all = confusion(&[1.0, 0.0, 1.0, 0.0], &[0.9, 0.1, 0.2, 0.8], 0.0).unwrap();
        assert_eq!((all.tp, all.fp, all.tn, all.fn_), (2, 2, 0, 0));
    }

    #[test]
    fn hand_f1() {
        let m = scalar_metrics(&ConfusionCounts { tp: 2, tn: 0, fp: 1, fn_: 1 });
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_ranking() {
        let y = [0.0, 0.0, 1.0, 1.0];
        let s = [0.1, 0.2, 0.7, 0.9];
        assert_eq!(roc_auc(&y, &s).unwrap().1, 1.0);
        assert_eq!(pr_curve_ap(&y, &s).unwrap().1, 1.0);
    }

    #[test]
    fn all_tied_scores() {
        let y = [1.0, 0.0, 0.0, 0.0];
        let s = [0.3; 4];
        assert_eq!(pr_curve_ap(&y, &s).unwrap().1, 0.25);
        assert_eq!(roc_auc(&y, &s).unwrap().1, 0.5);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(roc_auc(&[1.0, 1.0], &[0.1, 0.2]).unwrap_err(), MetricsError::SingleClassInput);
        assert_eq!(pr_curve_ap(&[0.0, 0.0], &[0.1, 0.2]).unwrap_err(), MetricsError::NoPositives);
        assert!(matches!(
            confusion(&[1.0], &[0.1, 0.2], 0.5),
            Err(MetricsError::LengthMismatch { .. })
        ));
        let r = evaluate(&[0.0, 0.0], &[0.1, 0.2], 0.5).unwrap();
        assert_eq!(r.auc_roc, None);
    }
}
