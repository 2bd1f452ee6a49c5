//! Per-horizon classification metrics: confusion counts, precision/recall/F1 at a fixed
//! threshold and exact pair-counting AUC-ROC.

use crate::error::{shape_err, Error, Result};

pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    /// Counts with `score >= threshold` predicted positive.
    pub fn from_scores(labels: &[u8], scores: &[f64], threshold: f64) -> Result<Self> {
        if labels.len() != scores.len() {
            return Err(shape_err("confusion counts", labels.len(), scores.len()));
        }
        let mut c = Confusion::default();
        for (&y, &s) in labels.iter().zip(scores) {
            match (y != 0, s >= threshold) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Precision, 0 without positive predictions.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// Recall, 0 without positive labels.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2PR / (P + R)`, evaluated as `2TP / (2TP + FP + FN)`; 0 when `TP = 0`.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 || num == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `(precision, recall, F1)` at `threshold`.
pub fn f1_score(labels: &[u8], scores: &[f64], threshold: f64) -> Result<(f64, f64, f64)> {
    if labels.is_empty() {
        return Err(Error::Input("F1 of an empty set".into()));
    }
    let c = Confusion::from_scores(labels, scores, threshold)?;
    Ok((c.precision(), c.recall(), c.f1()))
}

/// Probability that a random positive outscores a random negative, ties counted half.
pub fn auc_roc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(shape_err("auc_roc", labels.len(), scores.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Input("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Count in half-units so the result is one correctly rounded division.
    let (mut half_wins, mut neg_below, mut pos_total) = (0u128, 0u128, 0u128);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut n) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] != 0 {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        half_wins += 2 * p * neg_below + p * n;
        neg_below += n;
        pos_total += p;
        i = j;
    }
    if pos_total == 0 || neg_below == 0 {
        return Err(Error::UndefinedAuc("need at least one positive and one negative label"));
    }
    Ok(half_wins as f64 / (2 * pos_total * neg_below) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HorizonMetrics {
    pub counts: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the evaluation labels hold a single class.
    pub auc: Option<f64>,
}

/// Metrics for each horizon; `labels[i][h]` and `probs[i][h]` for window `i`.
pub fn evaluate_horizons(labels: &[Vec<u8>], probs: &[Vec<f64>]) -> Result<Vec<HorizonMetrics>> {
    if labels.len() != probs.len() {
        return Err(shape_err("evaluate_horizons", labels.len(), probs.len()));
    }
    let Some(k) = labels.first().map(Vec::len) else {
        return Err(Error::Input("no windows to evaluate".into()));
    };
    if labels.iter().any(|l| l.len() != k) || probs.iter().any(|p| p.len() != k) {
        return Err(shape_err("evaluate_horizons rows", k, "ragged rows"));
    }
    (0..k)
        .map(|h| {
            let y: Vec<u8> = labels.iter().map(|l| l[h]).collect();
            let s: Vec<f64> = probs.iter().map(|p| p[h]).collect();
            let counts = Confusion::from_scores(&y, &s, THRESHOLD)?;
            let auc = match auc_roc(&y, &s) {
                Ok(a) => Some(a),
                Err(Error::UndefinedAuc(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(HorizonMetrics {
                counts,
                precision: counts.precision(),
                recall: counts.recall(),
                f1: counts.f1(),
                auc,
            })
        })
        .collect()
}

/// F1 of always predicting the training-majority class.
pub fn majority_baseline_f1(train_labels: &[u8], eval_labels: &[u8]) -> f64 {
    let pos = train_labels.iter().filter(|&&l| l != 0).count();
    let majority_positive = 2 * pos > train_labels.len();
    let scores = vec![if majority_positive { 1.0 } else { 0.0 }; eval_labels.len()];
    Confusion::from_scores(eval_labels, &scores, THRESHOLD)
        .map(|c| c.f1())
        .unwrap_or(0.0)
}
