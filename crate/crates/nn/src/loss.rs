//! Positive-weighted binary cross-entropy over a vector of horizon probabilities.

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Mean over the `k` entries of `-[w_pos * y * ln p + (1 - y) * ln(1 - p)]`, with its
/// gradient with respect to each probability.
pub fn weighted_bce(probabilities: &[f64], labels: &[f64], pos_weight: f64) -> Result<(f64, Vec<f64>)> {
    if probabilities.len() != labels.len() || probabilities.is_empty() {
        return Err(shape_err("weighted_bce", &[labels.len()], &[probabilities.len()]));
    }
    let k = probabilities.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(probabilities.len());
    for (&p, &y) in probabilities.iter().zip(labels) {
        let p = clamp(p);
        loss -= pos_weight * y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        grad.push(-(pos_weight * y / p - (1.0 - y) / (1.0 - p)) / k);
    }
    Ok((loss / k, grad))
}

/// Training objective for a batch of `(N, k)` logits: the weighted BCE summed over the
/// `k` horizons and averaged over the batch. The gradient is taken with respect to the
/// logits in closed form (`sigmoid` folded in), which stays informative where the
/// probability clamp saturates.
pub fn horizon_loss_from_logits(logits: &Tensor, labels: &[f64], pos_weight: f64) -> Result<(f64, Tensor)> {
    if logits.rank() != 2 || logits.scalar_count() != labels.len() {
        return Err(shape_err("horizon_loss_from_logits", &[labels.len()], logits.shape()));
    }
    let (n, k) = (logits.dim(0), logits.dim(1));
    let mut loss = 0.0;
    let mut grad = vec![0.0; n * k];
    for (b, row) in logits.data().chunks(k).enumerate() {
        let probs: Vec<f64> = row.iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect();
        let ys = &labels[b * k..(b + 1) * k];
        let (l, _) = weighted_bce(&probs, ys, pos_weight)?;
        loss += l * k as f64;
        for j in 0..k {
            let (p, y) = (probs[j], ys[j]);
            grad[b * k + j] = (-pos_weight * y * (1.0 - p) + (1.0 - y) * p) / n as f64;
        }
    }
    Ok((loss / n as f64, Tensor::new(vec![n, k], grad)?))
}
