//! Mask regression, cross-entropy and their weighted sum.

use crate::error::{FmpnError, Result};
use crate::nn::Tensor;

use super::TrainConfig;

/// Mean squared error over all elements.
pub fn mask_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    check_same(pred, target)?;
    let n = pred.data.len() as f64;
    Ok(pred.data.iter().zip(&target.data).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n)
}

/// `∂ mask_loss / ∂ pred`.
pub fn mask_loss_grad(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_same(pred, target)?;
    let n = pred.data.len() as f64;
    let data = pred.data.iter().zip(&target.data).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Ok(Tensor::from_vec(pred.shape, data))
}

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(FmpnError::Shape(format!("{:?} vs {:?}", a.shape, b.shape)));
    }
    Ok(())
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

fn check_labels(logits: &Tensor, labels: &[usize]) -> Result<usize> {
    let k = logits.shape[1];
    if logits.batch() != labels.len() {
        return Err(FmpnError::Shape(format!(
            "{} logit rows for {} labels",
            logits.batch(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= k) {
        return Err(FmpnError::Argument(format!("label {l} out of range for {k} classes")));
    }
    Ok(k)
}

/// Batch mean of `−log softmax(logits)[label]`; logits are `(B, K, 1, 1)`.
pub fn classification_loss(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let k = check_labels(logits, labels)?;
    let total: f64 = logits
        .data
        .chunks_exact(k)
        .zip(labels)
        .map(|(row, &l)| -log_softmax(row)[l])
        .sum();
    Ok(total / labels.len() as f64)
}

/// `∂ classification_loss / ∂ logits`.
pub fn classification_loss_grad(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let k = check_labels(logits, labels)?;
    let b = labels.len() as f64;
    let mut out = Vec::with_capacity(logits.data.len());
    for (row, &l) in logits.data.chunks_exact(k).zip(labels) {
        for (j, lp) in log_softmax(row).into_iter().enumerate() {
            out.push((lp.exp() - if j == l { 1.0 } else { 0.0 }) / b);
        }
    }
    Ok(Tensor::from_vec(logits.shape, out))
}

/// `λ₁ · l_G + λ₂ · l_C`.
pub fn total_loss(mask_term: f64, class_term: f64, cfg: &TrainConfig) -> f64 {
    cfg.lambda1 * mask_term + cfg.lambda2 * class_term
}
