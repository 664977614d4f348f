//! Loss and discrimination metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROBABILITY_CLIP: f64 = 1e-15;

/// Per-instance losses of one model on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LossVector {
    values: Vec<f64>,
    loss_name: String,
}

impl LossVector {
    pub fn new(values: Vec<f64>, loss_name: impl Into<String>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Numerical(format!("loss value {v} is not a finite non-negative number")));
        }
        Ok(Self {
            values,
            loss_name: loss_name.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn loss_name(&self) -> &str {
        &self.loss_name
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn log_loss_per_instance(y: &[u8], p: &[f64]) -> Result<LossVector> {
    if y.len() != p.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: p.len(),
        });
    }
    let values = y
        .iter()
        .zip(p)
        .map(|(&yi, &pi)| {
            let pi = pi.clamp(PROBABILITY_CLIP, 1.0 - PROBABILITY_CLIP);
            if yi == 1 {
                -pi.ln()
            } else {
                -(1.0 - pi).ln()
            }
        })
        .collect();
    LossVector::new(values, "logloss")
}

/// Arithmetic mean of the per-instance losses.
pub fn expected_loss(loss: &LossVector) -> Result<f64> {
    if loss.is_empty() {
        return Err(Error::Empty("loss vector"));
    }
    Ok(loss.values.iter().sum::<f64>() / loss.len() as f64)
}

/// Area under the ROC curve via the Mann-Whitney statistic with average
/// ranks for tied scores.
pub fn roc_auc(y: &[u8], scores: &[f64]) -> Result<f64> {
    if y.len() != scores.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: scores.len(),
        });
    }
    let n_pos = y.iter().filter(|&&v| v == 1).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numerical("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1 ..= end share their average
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        let positives = order[start..end].iter().filter(|&&i| y[i] == 1).count();
        pos_rank_sum += avg_rank * positives as f64;
        start = end;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// The two ways of turning a pair of loss vectors into one number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossDifference {
    /// Mean of `|base_i - permuted_i|`.
    pub mean_abs_diff: f64,
    /// `|mean(base) - mean(permuted)|`.
    pub abs_mean_diff: f64,
}

pub fn loss_difference_estimators(base: &LossVector, permuted: &LossVector) -> Result<LossDifference> {
    if base.len() != permuted.len() {
        return Err(Error::LengthMismatch {
            left: base.len(),
            right: permuted.len(),
        });
    }
    if base.loss_name != permuted.loss_name {
        return Err(Error::InvalidConfig(format!(
            "cannot compare '{}' losses with '{}' losses",
            base.loss_name, permuted.loss_name
        )));
    }
    if base.is_empty() {
        return Err(Error::Empty("loss vector"));
    }
    let n = base.len() as f64;
    let mean_abs_diff = base
        .values
        .iter()
        .zip(&permuted.values)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n;
    let abs_mean_diff = (expected_loss(base)? - expected_loss(permuted)?).abs();
    Ok(LossDifference {
        mean_abs_diff,
        abs_mean_diff,
    })
}
