//! Permutation importance: the fixed-model variant, the permute-and-relearn
//! variant, and the pairwise correlation-weighted combination of relearn
//! importances.
//!
//! Within one train/test split every retrain uses the same learner spec and
//! training seed as the baseline model, so the only difference between the
//! baseline and a permuted model is the permuted training columns. Each pair
//! `(i, j)` draws its row permutation from a seed derived from the run seed,
//! the split and the pair itself, which makes a pair's importance independent
//! of evaluation order and thread scheduling.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::{partners_above_threshold, CorrelationMatrix};
use crate::data::DataTable;
use crate::error::{Error, Result};
use crate::learners::{train, LearnerSpec, TrainedModel};
use crate::metrics::{expected_loss, log_loss_per_instance, loss_difference_estimators, roc_auc, LossDifference, LossVector};
use crate::rng::{derive_seed, rng_from, tag};

/// Which importance definition a run computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ppa,
    Spi,
    Fisher,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ppa" => Ok(Method::Ppa),
            "spi" => Ok(Method::Spi),
            "fisher" => Ok(Method::Fisher),
            other => Err(Error::InvalidConfig(format!("unknown method '{other}'"))),
        }
    }
}

/// Loss whose expected-value difference defines an importance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceLoss {
    /// Mean logistic loss on the test set.
    #[default]
    Logloss,
    /// `1 - ROC AUC` on the test set.
    OneMinusAuc,
}

impl std::str::FromStr for ImportanceLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logloss" => Ok(ImportanceLoss::Logloss),
            "one_minus_auc" => Ok(ImportanceLoss::OneMinusAuc),
            other => Err(Error::InvalidConfig(format!("unknown loss '{other}'"))),
        }
    }
}

/// Columns to shuffle with one shared row permutation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationPlan {
    columns: Vec<usize>,
    pub seed: u64,
}

impl PermutationPlan {
    pub fn new(mut columns: Vec<usize>, seed: u64) -> Result<Self> {
        columns.sort_unstable();
        columns.dedup();
        if columns.is_empty() || columns.len() > 2 {
            return Err(Error::InvalidConfig(format!(
                "a permutation plan covers 1 or 2 columns, got {}",
                columns.len()
            )));
        }
        Ok(Self { columns, seed })
    }

    /// Plan for the unordered pair `{i, j}`, a single column when `i == j`,
    /// with its seed derived from the run seed, split and pair.
    pub fn for_pair(run_seed: u64, split_id: usize, i: usize, j: usize) -> Self {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        let seed = derive_seed(&[tag::PERMUTE, run_seed, split_id as u64, a as u64, b as u64]);
        let columns = if a == b { vec![a] } else { vec![a, b] };
        Self { columns, seed }
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }
}

/// Reorders every column in `plan` by one shared random row permutation.
pub fn permute_columns_jointly(x: &Array2<f64>, plan: &PermutationPlan) -> Result<Array2<f64>> {
    if let Some(&c) = plan.columns.iter().find(|&&c| c >= x.ncols()) {
        return Err(Error::IndexOutOfBounds { index: c, len: x.ncols() });
    }
    let mut rng = rng_from(&[plan.seed]);
    let mut perm: Vec<usize> = (0..x.nrows()).collect();
    perm.shuffle(&mut rng);
    let mut out = x.clone();
    for &c in &plan.columns {
        let src = x.column(c);
        for (row, &p) in perm.iter().enumerate() {
            out[[row, c]] = src[p];
        }
    }
    Ok(out)
}

/// A model evaluated on the test set, with everything a permuted model is
/// compared against.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub model: TrainedModel,
    pub test_losses: LossVector,
    /// Expected test loss under the importance loss.
    pub test_loss: f64,
    pub test_auc: f64,
}

impl Baseline {
    pub fn evaluate(model: TrainedModel, test: &DataTable, loss: ImportanceLoss) -> Result<Self> {
        let (test_losses, test_loss, test_auc) = score(&model, test.x(), test.y(), loss)?;
        Ok(Self {
            model,
            test_losses,
            test_loss,
            test_auc,
        })
    }

    pub fn fit(spec: &LearnerSpec, train_data: &DataTable, test: &DataTable, seed: u64, loss: ImportanceLoss) -> Result<Self> {
        let model = train(spec, train_data.x(), train_data.y(), seed)?;
        Self::evaluate(model, test, loss)
    }
}

/// Per-instance log losses, expected importance loss and AUC.
fn score(model: &TrainedModel, x: &Array2<f64>, y: &[u8], loss: ImportanceLoss) -> Result<(LossVector, f64, f64)> {
    let p = model.predict_proba(x)?;
    let losses = log_loss_per_instance(y, &p)?;
    let auc = roc_auc(y, &p).unwrap_or(f64::NAN);
    let expected = match loss {
        ImportanceLoss::Logloss => expected_loss(&losses)?,
        ImportanceLoss::OneMinusAuc => 1.0 - roc_auc(y, &p)?,
    };
    Ok((losses, expected, auc))
}

/// One permuted evaluation: the importance value and the two loss-difference
/// estimators computed from per-instance log losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiOutcome {
    pub value: f64,
    pub jensen: LossDifference,
}

/// Permute-and-relearn importance: permute `plan`'s columns in the training
/// data, retrain with the baseline's spec and `seed`, and return the increase
/// in expected test loss.
pub fn relearn_pi(
    spec: &LearnerSpec,
    train_data: &DataTable,
    test: &DataTable,
    plan: &PermutationPlan,
    baseline: &Baseline,
    seed: u64,
    loss: ImportanceLoss,
) -> Result<PiOutcome> {
    let permuted = permute_columns_jointly(train_data.x(), plan)?;
    let model = train(spec, &permuted, train_data.y(), seed)?;
    let (losses, expected, _) = score(&model, test.x(), test.y(), loss)?;
    Ok(PiOutcome {
        value: expected - baseline.test_loss,
        jensen: loss_difference_estimators(&baseline.test_losses, &losses)?,
    })
}

/// Fixed-model importance: permute `plan`'s columns in the test data and
/// re-evaluate the baseline model without retraining.
pub fn fisher_pi(test: &DataTable, plan: &PermutationPlan, baseline: &Baseline, loss: ImportanceLoss) -> Result<PiOutcome> {
    let permuted = permute_columns_jointly(test.x(), plan)?;
    let (losses, expected, _) = score(&baseline.model, &permuted, test.y(), loss)?;
    Ok(PiOutcome {
        value: expected - baseline.test_loss,
        jensen: loss_difference_estimators(&baseline.test_losses, &losses)?,
    })
}

/// Relearn importance of the unordered pair `(i, j)`, `i <= j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairImportance {
    pub i: usize,
    pub j: usize,
    pub value: f64,
    pub split_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JensenRecord {
    pub split_id: usize,
    pub i: usize,
    pub j: usize,
    pub mean_abs_diff: f64,
    pub abs_mean_diff: f64,
}

/// Everything a relearn loop needs for one split.
pub struct SplitTask<'a> {
    pub spec: &'a LearnerSpec,
    pub train: &'a DataTable,
    pub test: &'a DataTable,
    pub baseline: &'a Baseline,
    pub run_seed: u64,
    pub train_seed: u64,
    pub split_id: usize,
    pub loss: ImportanceLoss,
}

impl SplitTask<'_> {
    fn relearn_pairs(&self, pairs: &[(usize, usize)]) -> Result<(Vec<PairImportance>, Vec<JensenRecord>)> {
        let outcomes: Vec<PiOutcome> = pairs
            .par_iter()
            .map(|&(i, j)| {
                let plan = PermutationPlan::for_pair(self.run_seed, self.split_id, i, j);
                relearn_pi(self.spec, self.train, self.test, &plan, self.baseline, self.train_seed, self.loss)
            })
            .collect::<Result<_>>()?;
        Ok(pairs
            .iter()
            .zip(outcomes)
            .map(|(&(i, j), o)| {
                (
                    PairImportance {
                        i,
                        j,
                        value: o.value,
                        split_id: self.split_id,
                    },
                    JensenRecord {
                        split_id: self.split_id,
                        i,
                        j,
                        mean_abs_diff: o.jensen.mean_abs_diff,
                        abs_mean_diff: o.jensen.abs_mean_diff,
                    },
                )
            })
            .unzip())
    }
}

/// Unordered pairs `(i, j)`, `i <= j`, visited by the thresholded loop:
/// every diagonal entry plus every off-diagonal pair with `|R| > alpha`.
pub fn pairs_above_threshold(r: &CorrelationMatrix, alpha: f64) -> Vec<(usize, usize)> {
    let mut set = BTreeSet::new();
    for i in 0..r.len() {
        for j in partners_above_threshold(r, i, alpha) {
            set.insert((i.min(j), i.max(j)));
        }
    }
    set.into_iter().collect()
}

/// Correlation-weighted average of cached pair importances.
///
/// For feature `i`, `p` accumulates `PI(i,i)` plus `|R[i,j]| * PI(i,j)` for
/// each partner `j` above `alpha`, and `q` accumulates `|R[i,j]|` over the
/// same partners including `i` itself, so `q >= 1`.
pub fn weighted_ppi(r: &CorrelationMatrix, alpha: f64, pair_pi: &BTreeMap<(usize, usize), f64>) -> Result<Vec<f64>> {
    (0..r.len())
        .map(|i| {
            let mut p = 0.0;
            let mut q = 0.0;
            for j in partners_above_threshold(r, i, alpha) {
                let key = (i.min(j), i.max(j));
                let pi = *pair_pi
                    .get(&key)
                    .ok_or_else(|| Error::Numerical(format!("missing importance for pair {key:?}")))?;
                let w = r.get(i, j).abs();
                if i == j {
                    p += pi;
                } else {
                    p += w * pi;
                }
                q += w;
            }
            Ok(p / q)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpaOutcome {
    pub ppi: Vec<f64>,
    pub pairs: Vec<PairImportance>,
    pub jensen: Vec<JensenRecord>,
}

impl PpaOutcome {
    pub fn retrains(&self) -> usize {
        self.pairs.len()
    }

    pub fn pair_map(&self) -> BTreeMap<(usize, usize), f64> {
        self.pairs.iter().map(|p| ((p.i, p.j), p.value)).collect()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("alpha {alpha} not in [0, 1)")))
    }
}

/// Pairwise permutation importance for every feature of one split. Each
/// unordered pair is retrained once and shared by both of its features.
pub fn ppa_run(task: &SplitTask, r: &CorrelationMatrix, alpha: f64) -> Result<PpaOutcome> {
    check_alpha(alpha)?;
    if r.len() != task.train.n_features() {
        return Err(Error::WidthMismatch {
            expected: task.train.n_features(),
            actual: r.len(),
        });
    }
    let pairs_to_fit = pairs_above_threshold(r, alpha);
    let (pairs, jensen) = task.relearn_pairs(&pairs_to_fit)?;
    let outcome = PpaOutcome {
        ppi: Vec::new(),
        pairs,
        jensen,
    };
    let ppi = weighted_ppi(r, alpha, &outcome.pair_map())?;
    Ok(PpaOutcome { ppi, ..outcome })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpiOutcome {
    pub spi: Vec<f64>,
    pub jensen: Vec<JensenRecord>,
}

/// Single-feature relearn importance for every feature; uses the same
/// permutation seeds as the diagonal of [`ppa_run`].
pub fn spi_run(task: &SplitTask) -> Result<SpiOutcome> {
    let diag: Vec<(usize, usize)> = (0..task.train.n_features()).map(|i| (i, i)).collect();
    let (pairs, jensen) = task.relearn_pairs(&diag)?;
    Ok(SpiOutcome {
        spi: pairs.into_iter().map(|p| p.value).collect(),
        jensen,
    })
}

/// Fixed-model importance for every feature of one split.
pub fn fisher_run(task: &SplitTask) -> Result<SpiOutcome> {
    let outcomes: Vec<PiOutcome> = (0..task.test.n_features())
        .into_par_iter()
        .map(|i| {
            let plan = PermutationPlan::for_pair(task.run_seed, task.split_id, i, i);
            fisher_pi(task.test, &plan, task.baseline, task.loss)
        })
        .collect::<Result<_>>()?;
    let jensen = outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| JensenRecord {
            split_id: task.split_id,
            i,
            j: i,
            mean_abs_diff: o.jensen.mean_abs_diff,
            abs_mean_diff: o.jensen.abs_mean_diff,
        })
        .collect();
    Ok(SpiOutcome {
        spi: outcomes.into_iter().map(|o| o.value).collect(),
        jensen,
    })
}

/// Ranks within one row of values: 1 for the largest, ties share the
/// average of the ranks they span.
pub fn rank_descending(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + 1 + end) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankSummary {
    pub per_split_ranks: Vec<Vec<f64>>,
    pub avg_rank: Vec<f64>,
    pub rank_stderr: Vec<f64>,
}

/// Ranks each split's values and summarizes them per feature as mean rank
/// and standard error of the mean.
pub fn aggregate_ranks(per_split_values: &[Vec<f64>]) -> Result<RankSummary> {
    let Some(first) = per_split_values.first() else {
        return Err(Error::Empty("importance matrix"));
    };
    let m = first.len();
    if m == 0 {
        return Err(Error::Empty("importance matrix"));
    }
    if let Some(row) = per_split_values.iter().find(|r| r.len() != m) {
        return Err(Error::WidthMismatch {
            expected: m,
            actual: row.len(),
        });
    }
    let per_split_ranks: Vec<Vec<f64>> = per_split_values.iter().map(|v| rank_descending(v)).collect();
    let s = per_split_ranks.len() as f64;
    let mut avg_rank = vec![0.0; m];
    let mut rank_stderr = vec![0.0; m];
    for f in 0..m {
        let mean = per_split_ranks.iter().map(|r| r[f]).sum::<f64>() / s;
        avg_rank[f] = mean;
        if per_split_ranks.len() > 1 {
            let var = per_split_ranks.iter().map(|r| (r[f] - mean).powi(2)).sum::<f64>() / (s - 1.0);
            rank_stderr[f] = (var / s).sqrt();
        }
    }
    Ok(RankSummary {
        per_split_ranks,
        avg_rank,
        rank_stderr,
    })
}
