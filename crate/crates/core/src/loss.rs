//! Pairwise rank loss and MSE, each with exact prediction gradients.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Rank,
    Mse,
}

/// Index pairs into a prediction batch, ordered so the first index points at
/// the sample with the strictly greater ground-truth score.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pairs: Vec<(usize, usize)>,
}

impl PairBatch {
    /// All ordered pairs with strictly distinct ground-truth scores. Tied
    /// pairs carry no ordering signal and are skipped.
    pub fn from_scores(scores: &[f64]) -> Self {
        let mut pairs = Vec::new();
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if scores[i] > scores[j] {
                    pairs.push((i, j));
                }
            }
        }
        Self { pairs }
    }

    pub fn from_pairs(pairs: Vec<(usize, usize)>) -> Self {
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Mean over pairs of -log(exp(y_hi) / (exp(y_hi) + exp(y_lo))), evaluated
/// as softplus(-(y_hi - y_lo)) so large gaps cannot overflow. Returns the
/// loss and its gradient with respect to each prediction.
pub fn rank_loss(pairs: &PairBatch, preds: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::Unpersonalizable(
            "rank loss over an empty pair batch".into(),
        ));
    }
    let inv = 1.0 / pairs.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; preds.len()];
    for &(hi, lo) in &pairs.pairs {
        let gap = preds[hi] - preds[lo];
        loss += softplus(-gap);
        // d/d gap softplus(-gap) = -sigmoid(-gap)
        let g = -sigmoid(-gap) * inv;
        grad[hi] += g;
        grad[lo] -= g;
    }
    Ok((loss * inv, grad))
}

/// Mean squared error and its prediction gradient 2 (pred - target) / N.
pub fn mse_loss(preds: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    if preds.len() != targets.len() {
        return Err(Error::shape("mse_loss", targets.len(), preds.len()));
    }
    if preds.is_empty() {
        return Err(Error::shape("mse_loss", "non-empty batch", 0));
    }
    let n = preds.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; preds.len()];
    for (k, (&p, &t)) in preds.iter().zip(targets).enumerate() {
        let d = p - t;
        loss += d * d;
        grad[k] = 2.0 * d / n;
    }
    Ok((loss / n, grad))
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
