//! Metrics: confusion matrix, accuracy/precision/recall/F1, ROC-AUC,
//! precision-recall curves and per-class classification reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Count the four confusion cells for binary decisions against binary labels.
pub fn confusion(decisions: &[u8], labels: &[u8]) -> Result<ConfusionMatrix> {
    if decisions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: decisions.len(),
            context: "confusion decisions vs labels".to_string(),
        });
    }
    let mut cm = ConfusionMatrix {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&d, &y) in decisions.iter().zip(labels) {
        match (d, y) {
            (1, 1) => cm.tp += 1,
            (1, 0) => cm.fp += 1,
            (0, 0) => cm.tn += 1,
            (0, 1) => cm.fn_ += 1,
            _ => {
                return Err(Error::InvalidArgument(
                    "confusion expects 0/1 entries".to_string(),
                ))
            }
        }
    }
    Ok(cm)
}

/// TP/(TP+FP); 0 by convention when no positive predictions exist.
pub fn precision(cm: &ConfusionMatrix) -> f64 {
    let denom = cm.tp + cm.fp;
    if denom == 0 {
        0.0
    } else {
        cm.tp as f64 / denom as f64
    }
}

/// TP/(TP+FN); 0 by convention when no positives exist.
pub fn recall(cm: &ConfusionMatrix) -> f64 {
    let denom = cm.tp + cm.fn_;
    if denom == 0 {
        0.0
    } else {
        cm.tp as f64 / denom as f64
    }
}

/// Harmonic mean of precision and recall; 0 when P+R = 0.
pub fn f1(cm: &ConfusionMatrix) -> f64 {
    let p = precision(cm);
    let r = recall(cm);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> f64 {
    if cm.total() == 0 {
        0.0
    } else {
        (cm.tp + cm.tn) as f64 / cm.total() as f64
    }
}

/// True when a metric denominator was empty (its value was forced to 0).
pub fn degenerate_flags(cm: &ConfusionMatrix) -> Vec<String> {
    let mut flags = Vec::new();
    if cm.tp + cm.fp == 0 {
        flags.push("precision: no positive predictions".to_string());
    }
    if cm.tp + cm.fn_ == 0 {
        flags.push("recall: no positive labels".to_string());
    }
    flags
}

/// One ROC point: (false positive rate, true positive rate, threshold).
pub type RocPoint = (f64, f64, f64);

/// Area under the ROC curve with its curve points. Ties in `probs` are
/// handled by rank averaging, which matches trapezoidal integration over the
/// tied blocks.
pub fn roc_auc(probs: &[f64], labels: &[u8]) -> Result<(f64, Vec<RocPoint>)> {
    check_binary(probs, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass("roc_auc needs both classes".to_string()));
    }

    // midrank formulation
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[a].partial_cmp(&probs[b]).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && probs[order[j]] == probs[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0; // average of ranks i+1..=j
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let auc = (rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos as f64 * n_neg as f64);

    // curve points at distinct thresholds, descending
    let mut curve = vec![(0.0, 0.0, f64::INFINITY)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut k = order.len();
    while k > 0 {
        let thr = probs[order[k - 1]];
        while k > 0 && probs[order[k - 1]] == thr {
            if labels[order[k - 1]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k -= 1;
        }
        curve.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64, thr));
    }
    Ok((auc, curve))
}

/// One PR point per distinct probability threshold, descending threshold
/// (recall never decreases as the threshold falls).
pub fn pr_curve(probs: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64, f64)>> {
    check_binary(probs, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::SingleClass("pr_curve needs both classes".to_string()));
    }
    let mut thresholds: Vec<f64> = probs.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();

    let mut points = Vec::with_capacity(thresholds.len());
    for thr in thresholds {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for (&p, &y) in probs.iter().zip(labels) {
            if p >= thr {
                if y == 1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let prec = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let rec = tp as f64 / n_pos as f64;
        points.push((rec, prec, thr));
    }
    Ok(points)
}

/// Per-class precision/recall/F1 with supports, binary task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    /// Rows for class 0 and class 1: (precision, recall, f1, support).
    pub rows: [(f64, f64, f64, usize); 2],
}

pub fn classification_report(decisions: &[u8], labels: &[u8]) -> Result<ClassificationReport> {
    let cm = confusion(decisions, labels)?;
    // class 1 row is the standard positive view; class 0 row swaps the cells
    let cm0 = ConfusionMatrix {
        tp: cm.tn,
        fp: cm.fn_,
        tn: cm.tp,
        fn_: cm.fp,
    };
    let support0 = cm.tn + cm.fp;
    let support1 = cm.tp + cm.fn_;
    Ok(ClassificationReport {
        rows: [
            (precision(&cm0), recall(&cm0), f1(&cm0), support0),
            (precision(&cm), recall(&cm), f1(&cm), support1),
        ],
    })
}

/// Full evaluation of probabilities against labels at a threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset_id: String,
    pub model_digest: String,
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub roc_auc: f64,
    pub roc_curve: Vec<RocPoint>,
    pub report: ClassificationReport,
    pub degenerate: Vec<String>,
}

pub fn evaluate(
    probs: &[f64],
    labels: &[u8],
    threshold: f64,
    dataset_id: &str,
    model_digest: &str,
) -> Result<EvaluationReport> {
    let decisions: Vec<u8> = probs.iter().map(|&p| u8::from(p >= threshold)).collect();
    let cm = confusion(&decisions, labels)?;
    let (auc, curve) = roc_auc(probs, labels)?;
    Ok(EvaluationReport {
        dataset_id: dataset_id.to_string(),
        model_digest: model_digest.to_string(),
        threshold,
        confusion: cm,
        accuracy: accuracy(&cm),
        precision: precision(&cm),
        recall: recall(&cm),
        f1: f1(&cm),
        roc_auc: auc,
        roc_curve: curve,
        report: classification_report(&decisions, labels)?,
        degenerate: degenerate_flags(&cm),
    })
}

impl EvaluationReport {
    /// Human-readable table, percentages at two decimals.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dataset: {}  threshold: {:.6}", self.dataset_id, self.threshold);
        let _ = writeln!(out, "model:   {}", self.model_digest);
        let _ = writeln!(
            out,
            "confusion: tp={} fp={} tn={} fn={}",
            self.confusion.tp, self.confusion.fp, self.confusion.tn, self.confusion.fn_
        );
        let _ = writeln!(out, "{:<12}{:>10}", "Metric", "Value");
        for (name, v) in [
            ("Accuracy", self.accuracy),
            ("Precision", self.precision),
            ("Recall", self.recall),
            ("F1-Score", self.f1),
            ("ROC-AUC", self.roc_auc),
        ] {
            let _ = writeln!(out, "{:<12}{:>9.2}%", name, v * 100.0);
        }
        let _ = writeln!(out, "per-class (precision / recall / f1 / support):");
        for (class, row) in self.report.rows.iter().enumerate() {
            let _ = writeln!(
                out,
                "  class {class}: {:.2}% / {:.2}% / {:.2}% / {}",
                row.0 * 100.0,
                row.1 * 100.0,
                row.2 * 100.0,
                row.3
            );
        }
        for flag in &self.degenerate {
            let _ = writeln!(out, "  note: {flag}");
        }
        out
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Artifact(format!("report encode: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Plot-ready 2x2 confusion grid: rows = actual, columns = predicted.
    pub fn save_confusion_grid(&self, path: &Path) -> Result<()> {
        let cm = &self.confusion;
        let text = format!(
            "actual\\predicted,0,1\n0,{},{}\n1,{},{}\n",
            cm.tn, cm.fp, cm.fn_, cm.tp
        );
        fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

fn check_binary(probs: &[f64], labels: &[u8]) -> Result<()> {
    if probs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: probs.len(),
            context: "probs vs labels".to_string(),
        });
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::InvalidArgument("labels must be 0/1".to_string()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_decisions_have_no_errors() {
        let labels = vec![0, 1, 1, 0, 1];
        let cm = confusion(&labels, &labels).unwrap();
        assert_eq!((cm.fp, cm.fn_), (0, 0));
        assert_eq!(accuracy(&cm), 1.0);
        assert_eq!(f1(&cm), 1.0);
    }

    #[test]
    fn recall_from_raw_detection_counts() {
        // 48 of 67 positives detected
        let cm = ConfusionMatrix {
            tp: 48,
            fn_: 19,
            fp: 0,
            tn: 0,
        };
        assert!((recall(&cm) - 48.0 / 67.0).abs() < 1e-12);
        assert!((recall(&cm) - 0.7164).abs() < 5e-4);
    }

    #[test]
    fn singleton_tp_gives_unit_metrics() {
        let cm = ConfusionMatrix {
            tp: 1,
            fp: 0,
            tn: 0,
            fn_: 0,
        };
        assert_eq!((precision(&cm), recall(&cm), f1(&cm)), (1.0, 1.0, 1.0));
    }

    #[test]
    fn zero_denominator_convention() {
        let cm = ConfusionMatrix {
            tp: 0,
            fp: 0,
            tn: 3,
            fn_: 2,
        };
        assert_eq!(precision(&cm), 0.0);
        assert!(!degenerate_flags(&cm).is_empty());
    }

    #[test]
    fn roc_auc_perfect_and_flipped() {
        let probs = vec![0.1, 0.2, 0.8, 0.9];
        let labels = vec![0, 0, 1, 1];
        let (auc, _) = roc_auc(&probs, &labels).unwrap();
        assert!((auc - 1.0).abs() < 1e-12);

        let flipped: Vec<f64> = probs.iter().map(|p| 1.0 - p).collect();
        let inv_labels: Vec<u8> = labels.iter().map(|&y| 1 - y).collect();
        let (auc2, _) = roc_auc(&flipped, &inv_labels).unwrap();
        assert!((auc - auc2).abs() < 1e-12);
    }

    #[test]
    fn roc_auc_matches_pairwise_oracle() {
        let mut probs = Vec::new();
        let mut labels = Vec::new();
        let mut state = 123456789u64;
        for i in 0..30 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            probs.push(((state >> 33) % 10) as f64 / 10.0); // coarse -> ties
            labels.push((i % 3 == 0) as u8);
        }
        let (auc, _) = roc_auc(&probs, &labels).unwrap();

        let mut concordant = 0.0;
        let mut pairs = 0.0;
        for (i, (&pi, &yi)) in probs.iter().zip(&labels).enumerate() {
            for (j, (&pj, &yj)) in probs.iter().zip(&labels).enumerate() {
                if i == j || yi != 1 || yj != 0 {
                    continue;
                }
                pairs += 1.0;
                if pi > pj {
                    concordant += 1.0;
                } else if pi == pj {
                    concordant += 0.5;
                }
            }
        }
        assert!((auc - concordant / pairs).abs() < 1e-9);
    }

    #[test]
    fn roc_auc_monotone_transform_invariance() {
        let probs = vec![0.1, 0.4, 0.35, 0.8, 0.65, 0.2];
        let labels = vec![0, 1, 0, 1, 1, 0];
        let (a, _) = roc_auc(&probs, &labels).unwrap();
        let squashed: Vec<f64> = probs.iter().map(|p| p.powi(3) * 0.5 + 0.1).collect();
        let (b, _) = roc_auc(&squashed, &labels).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn pr_curve_contains_perfect_point_when_separable() {
        let probs = vec![0.9, 0.9, 0.1, 0.1];
        let labels = vec![1, 1, 0, 0];
        let points = pr_curve(&probs, &labels).unwrap();
        assert!(points.iter().any(|&(r, p, _)| r == 1.0 && p == 1.0));
    }

    #[test]
    fn pr_curve_all_equal_probs_single_point() {
        let probs = vec![0.5; 4];
        let labels = vec![1, 0, 1, 0];
        let points = pr_curve(&probs, &labels).unwrap();
        assert_eq!(points.len(), 1);
    }

    #[test]
    fn pr_points_match_direct_confusion() {
        let probs = vec![0.15, 0.3, 0.3, 0.7, 0.55, 0.92, 0.05];
        let labels = vec![0, 0, 1, 1, 0, 1, 0];
        for (rec, prec, thr) in pr_curve(&probs, &labels).unwrap() {
            let decisions: Vec<u8> = probs.iter().map(|&p| u8::from(p >= thr)).collect();
            let cm = confusion(&decisions, &labels).unwrap();
            assert!((prec - precision(&cm)).abs() < 1e-12);
            assert!((rec - recall(&cm)).abs() < 1e-12);
        }
    }

    #[test]
    fn swap_symmetry_preserves_accuracy() {
        let decisions = vec![1, 0, 1, 1, 0];
        let labels = vec![1, 1, 0, 1, 0];
        let cm = confusion(&decisions, &labels).unwrap();
        let flipped_d: Vec<u8> = decisions.iter().map(|&d| 1 - d).collect();
        let flipped_y: Vec<u8> = labels.iter().map(|&y| 1 - y).collect();
        let cm2 = confusion(&flipped_d, &flipped_y).unwrap();
        assert_eq!((cm.tp, cm.fp, cm.tn, cm.fn_), (cm2.tn, cm2.fn_, cm2.fp, cm2.tp));
        assert_eq!(accuracy(&cm), accuracy(&cm2));
    }

    #[test]
    fn classification_report_counts() {
        let decisions = vec![1, 1, 0, 0, 1];
        let labels = vec![1, 0, 0, 1, 1];
        let rep = classification_report(&decisions, &labels).unwrap();
        assert_eq!(rep.rows[0].3 + rep.rows[1].3, 5);
        // class 1: tp=2 fp=1 fn=1
        assert!((rep.rows[1].0 - 2.0 / 3.0).abs() < 1e-12);
        assert!((rep.rows[1].1 - 2.0 / 3.0).abs() < 1e-12);
    }
}
