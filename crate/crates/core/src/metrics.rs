//! Rank and linear correlation metrics.

use crate::error::{Error, Result};

/// A correlation value plus a flag marking the constant-input convention:
/// when either side has zero (rank) variance the value is pinned to 0 so
/// aggregates stay computable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub value: f64,
    pub degenerate: bool,
}

impl Correlation {
    fn ok(value: f64) -> Self {
        Self {
            value,
            degenerate: false,
        }
    }

    fn degenerate() -> Self {
        Self {
            value: 0.0,
            degenerate: true,
        }
    }
}

/// Spearman rank-order correlation.
///
/// Without ties this is the closed form `1 - 6 sum(d^2) / (N (N^2 - 1))` on
/// integer ranks. With ties it falls back to the Pearson correlation of
/// fractional (average) ranks, the standard continuous-under-perturbation
/// convention.
pub fn srocc(truth: &[f64], preds: &[f64]) -> Result<Correlation> {
    check_lengths("srocc", truth, preds)?;
    let t_ties = has_ties(truth);
    let p_ties = has_ties(preds);
    if !t_ties && !p_ties {
        let rt = integer_ranks(truth);
        let rp = integer_ranks(preds);
        let n = truth.len() as f64;
        let d2: f64 = rt
            .iter()
            .zip(&rp)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        return Ok(Correlation::ok(1.0 - 6.0 * d2 / (n * (n * n - 1.0))));
    }
    let rt = fractional_ranks(truth);
    let rp = fractional_ranks(preds);
    pearson(&rt, &rp)
}

/// Pearson linear correlation, with the same constant-input convention.
pub fn plcc(truth: &[f64], preds: &[f64]) -> Result<Correlation> {
    check_lengths("plcc", truth, preds)?;
    pearson(truth, preds)
}

fn check_lengths(ctx: &str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(ctx, a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::shape(ctx, "at least 2 samples", a.len()));
    }
    if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return Err(Error::Numerical(format!("{ctx}: non-finite input")));
    }
    Ok(())
}

fn pearson(a: &[f64], b: &[f64]) -> Result<Correlation> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(Correlation::degenerate());
    }
    let r = cov / (va * vb).sqrt();
    // Guard against rounding pushing |r| a hair past 1.
    Ok(Correlation::ok(r.clamp(-1.0, 1.0)))
}

fn has_ties(values: &[f64]) -> bool {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    sorted.windows(2).any(|w| w[0] == w[1])
}

/// 1-based ranks; caller guarantees no ties.
fn integer_ranks(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).expect("finite values"));
    let mut ranks = vec![0; values.len()];
    for (rank, &idx) in order.iter().enumerate() {
        ranks[idx] = rank + 1;
    }
    ranks
}

/// Average ranks for tied runs: each member of a tie gets the mean of the
/// positions the run occupies.
fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Positions start+1 ..= end, averaged.
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}
