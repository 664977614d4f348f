//! Retrainable binary classifiers.
//!
//! Two families are available: L2-penalized logistic regression and
//! gradient-boosted regression trees fitted to the logistic loss. Both are
//! deterministic for a fixed spec, dataset and seed.

mod gbt;
mod grid;
mod logistic;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, tag};

pub use gbt::{GbtModel, GbtParams};
pub use grid::{cv_scores, cv_scores_or_single, default_grid, grid_search_cv, CvScore, GridSearch};
pub use logistic::{LogisticModel, LogisticParams};

/// Learner family plus its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "hyperparameters", rename_all = "lowercase")]
pub enum Family {
    Logistic(LogisticParams),
    Gbt(GbtParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    #[serde(flatten)]
    pub family: Family,
    pub seed: u64,
}

impl LearnerSpec {
    pub fn logistic(params: LogisticParams, seed: u64) -> Self {
        Self {
            family: Family::Logistic(params),
            seed,
        }
    }

    pub fn gbt(params: GbtParams, seed: u64) -> Self {
        Self {
            family: Family::Gbt(params),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.family {
            Family::Logistic(p) => p.validate(),
            Family::Gbt(p) => p.validate(),
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            Family::Logistic(_) => "logistic",
            Family::Gbt(_) => "gbt",
        }
    }
}

/// A fitted classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: LearnerSpec,
    pub feature_count: usize,
    params: FittedParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum FittedParams {
    Logistic(LogisticModel),
    Gbt(GbtModel),
}

impl TrainedModel {
    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.feature_count {
            return Err(Error::WidthMismatch {
                expected: self.feature_count,
                actual: x.ncols(),
            });
        }
        Ok(x.rows().into_iter().map(|row| self.predict_row(row)).collect())
    }

    fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        match &self.params {
            FittedParams::Logistic(m) => m.predict_row(row),
            FittedParams::Gbt(m) => m.predict_row(row),
        }
    }

    /// Logistic model with all weights and intercept set to zero.
    pub fn zero_logistic(feature_count: usize) -> Self {
        TrainedModel {
            spec: LearnerSpec::logistic(LogisticParams::default(), 0),
            feature_count,
            params: FittedParams::Logistic(LogisticModel::zeros(feature_count)),
        }
    }

    /// Logistic model with the given weights and intercept.
    pub fn logistic_from_weights(weights: Vec<f64>, intercept: f64) -> Self {
        TrainedModel {
            spec: LearnerSpec::logistic(LogisticParams::default(), 0),
            feature_count: weights.len(),
            params: FittedParams::Logistic(LogisticModel { weights, intercept }),
        }
    }

    pub fn logistic_params(&self) -> Option<&LogisticModel> {
        match &self.params {
            FittedParams::Logistic(m) => Some(m),
            FittedParams::Gbt(_) => None,
        }
    }

    pub fn gbt_params(&self) -> Option<&GbtModel> {
        match &self.params {
            FittedParams::Gbt(m) => Some(m),
            FittedParams::Logistic(_) => None,
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Fits `spec` to `(x, y)`.
pub fn train(spec: &LearnerSpec, x: &Array2<f64>, y: &[u8], seed: u64) -> Result<TrainedModel> {
    spec.validate()?;
    if x.nrows() == 0 {
        return Err(Error::Empty("training matrix"));
    }
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.nrows(),
            right: y.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite value in training matrix".into()));
    }
    let positives = y.iter().filter(|&&v| v == 1).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::SingleClass);
    }
    let params = match &spec.family {
        Family::Logistic(p) => FittedParams::Logistic(logistic::fit(p, x, y)?),
        Family::Gbt(p) => {
            let stream = derive_seed(&[tag::TRAIN, spec.seed, seed]);
            FittedParams::Gbt(gbt::fit(p, x, y, stream)?)
        }
    };
    Ok(TrainedModel {
        spec: spec.clone(),
        feature_count: x.ncols(),
        params,
    })
}

pub fn predict_proba(model: &TrainedModel, x: &Array2<f64>) -> Result<Vec<f64>> {
    model.predict_proba(x)
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Versioned JSON envelope for caching fitted models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBlob {
    pub format_version: u32,
    pub model: TrainedModel,
}

impl ModelBlob {
    pub fn to_json(model: &TrainedModel) -> Result<String> {
        Ok(serde_json::to_string(&ModelBlob {
            format_version: MODEL_FORMAT_VERSION,
            model: model.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<TrainedModel> {
        let blob: ModelBlob = serde_json::from_str(s)?;
        if blob.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "model blob version {} is not supported (expected {})",
                blob.format_version, MODEL_FORMAT_VERSION
            )));
        }
        Ok(blob.model)
    }
}

/// Hex SHA-256 over everything that determines a fit: spec, training data,
/// seed and the set of permuted columns.
pub fn cache_key(
    spec: &LearnerSpec,
    x: &Array2<f64>,
    y: &[u8],
    seed: u64,
    permuted_columns: &[usize],
) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(spec)?);
    h.update((x.nrows() as u64).to_le_bytes());
    h.update((x.ncols() as u64).to_le_bytes());
    for v in x.iter() {
        h.update(v.to_bits().to_le_bytes());
    }
    h.update(y);
    h.update(seed.to_le_bytes());
    let mut cols = permuted_columns.to_vec();
    cols.sort_unstable();
    for c in cols {
        h.update((c as u64).to_le_bytes());
    }
    Ok(hex::encode(h.finalize()))
}
