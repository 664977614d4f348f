//! Hyperparameter selection by stratified k-fold cross-validated ROC AUC.

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, GbtParams, LearnerSpec, LogisticParams};
use crate::data::stratified_kfold;
use crate::error::{Error, Result};
use crate::metrics::roc_auc;

/// Small default grid for a family (`"gbt"` or `"logistic"`).
pub fn default_grid(family: &str, seed: u64) -> Result<Vec<LearnerSpec>> {
    match family {
        "gbt" => {
            let mut grid = Vec::new();
            for n_trees in [50, 200] {
                for max_depth in [2, 3] {
                    for learning_rate in [0.1, 0.3] {
                        grid.push(LearnerSpec::gbt(
                            GbtParams {
                                n_trees,
                                max_depth,
                                learning_rate,
                                ..GbtParams::default()
                            },
                            seed,
                        ));
                    }
                }
            }
            Ok(grid)
        }
        "logistic" => Ok([0.01, 0.1, 1.0]
            .into_iter()
            .map(|l2_strength| {
                LearnerSpec::logistic(
                    LogisticParams {
                        l2_strength,
                        ..LogisticParams::default()
                    },
                    seed,
                )
            })
            .collect()),
        other => Err(Error::InvalidConfig(format!("unknown learner family '{other}'"))),
    }
}

/// Per-fold held-out AUCs of one grid entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub spec: LearnerSpec,
    pub fold_auc: Vec<f64>,
    pub mean_auc: f64,
}

/// Scores every grid entry and returns them in grid order.
pub fn cv_scores(grid: &[LearnerSpec], x: &Array2<f64>, y: &[u8], k: usize, seed: u64) -> Result<Vec<CvScore>> {
    if grid.is_empty() {
        return Err(Error::Empty("hyperparameter grid"));
    }
    let folds = stratified_kfold(y, k, seed)?;
    let n = y.len();
    let fold_data: Vec<_> = folds
        .iter()
        .map(|test| {
            let mut is_test = vec![false; n];
            for &i in test {
                is_test[i] = true;
            }
            let train_idx: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
            (train_idx, test.clone())
        })
        .collect();

    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..k).map(move |f| (g, f))).collect();
    let aucs: Vec<f64> = jobs
        .par_iter()
        .map(|&(g, f)| {
            let (tr, te) = &fold_data[f];
            let ytr: Vec<u8> = tr.iter().map(|&i| y[i]).collect();
            let yte: Vec<u8> = te.iter().map(|&i| y[i]).collect();
            let model = train(&grid[g], &x.select(Axis(0), tr), &ytr, seed)?;
            roc_auc(&yte, &model.predict_proba(&x.select(Axis(0), te))?)
        })
        .collect::<Result<_>>()?;

    Ok(grid
        .iter()
        .enumerate()
        .map(|(g, spec)| {
            let fold_auc = aucs[g * k..(g + 1) * k].to_vec();
            let mean_auc = fold_auc.iter().sum::<f64>() / k as f64;
            CvScore {
                spec: spec.clone(),
                fold_auc,
                mean_auc,
            }
        })
        .collect())
}

/// Outcome of a grid search: the winner plus the scores behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSearch {
    pub selected: LearnerSpec,
    /// Empty when the grid has a single entry, which is returned unscored.
    pub scores: Vec<CvScore>,
}

/// Cross-validates every entry unless the grid has only one.
pub fn cv_scores_or_single(grid: &[LearnerSpec], x: &Array2<f64>, y: &[u8], k: usize, seed: u64) -> Result<GridSearch> {
    if grid.len() == 1 {
        grid[0].validate()?;
        return Ok(GridSearch {
            selected: grid[0].clone(),
            scores: Vec::new(),
        });
    }
    let scores = cv_scores(grid, x, y, k, seed)?;
    let mut best = &scores[0];
    for s in &scores[1..] {
        if s.mean_auc > best.mean_auc {
            best = s;
        }
    }
    Ok(GridSearch {
        selected: best.spec.clone(),
        scores,
    })
}

/// The grid entry with the highest mean held-out AUC; earliest entry wins ties.
pub fn grid_search_cv(grid: &[LearnerSpec], x: &Array2<f64>, y: &[u8], k: usize, seed: u64) -> Result<LearnerSpec> {
    Ok(cv_scores_or_single(grid, x, y, k, seed)?.selected)
}
