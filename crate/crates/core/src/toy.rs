//! Synthetic correlated-feature benchmark and its three reference scenarios.
//!
//! Ten features are drawn from `N(0, Σ)` with `Σ` the identity plus a few
//! symmetric overrides. The latent score uses the coefficients in
//! [`COEFFICIENTS`] on the Gaussian draws; the label is 1 when the score plus
//! `N(0, noise_sd²)` noise reaches the sample mean of the score. Features are
//! then mapped to uniform margins and an independent uniform noise column is
//! optionally appended.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};

use crate::data::DataTable;
use crate::error::{Error, Result};
use crate::importance::Method;
use crate::pipeline::{run_importance, DataSource, ImportanceConfig, ImportanceReport, Manifest};
use crate::rng::{rng_from, tag};

/// Latent linear-model coefficients of `x1..x10`.
pub const COEFFICIENTS: [f64; 10] = [1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.5, 0.8, 1.2, 1.5];
pub const N_LATENT: usize = COEFFICIENTS.len();
pub const NOISE_FEATURE: &str = "noise";

/// `Σ[i, j] = Σ[j, i] = rho`, with `i` and `j` 1-based to match the
/// feature names `x1..x10`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceOverride {
    pub i: usize,
    pub j: usize,
    pub rho: f64,
}

/// Map from Gaussian draws to uniform margins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UniformTransform {
    /// Standard normal CDF.
    #[default]
    NormalCdf,
    /// Within-column rank divided by `n + 1`.
    EmpiricalRank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub n_samples: usize,
    pub covariance_overrides: Vec<CovarianceOverride>,
    /// Standard deviation of the label noise.
    pub noise_sd: f64,
    pub add_noise_feature: bool,
    #[serde(default)]
    pub uniform_transform: UniformTransform,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            covariance_overrides: Vec::new(),
            noise_sd: 0.1,
            add_noise_feature: true,
            uniform_transform: UniformTransform::NormalCdf,
            seed: 0,
        }
    }
}

impl ToyConfig {
    /// `x1` and `x2` correlated at 0.9.
    pub fn scenario_pair() -> Self {
        Self {
            covariance_overrides: vec![CovarianceOverride { i: 1, j: 2, rho: 0.9 }],
            ..Self::default()
        }
    }

    /// `x1` correlated at 0.9 with the irrelevant `x6`; `x1`, `x2` uncorrelated.
    pub fn scenario_irrelevant() -> Self {
        Self {
            covariance_overrides: vec![CovarianceOverride { i: 1, j: 6, rho: 0.9 }],
            ..Self::default()
        }
    }

    /// The covariance matrix, rejected unless symmetric positive definite.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        let mut sigma = DMatrix::<f64>::identity(N_LATENT, N_LATENT);
        for o in &self.covariance_overrides {
            if !(1..=N_LATENT).contains(&o.i) || !(1..=N_LATENT).contains(&o.j) || o.i == o.j {
                return Err(Error::InvalidConfig(format!(
                    "covariance override ({}, {}) must name two distinct features in 1..={N_LATENT}",
                    o.i, o.j
                )));
            }
            if !(o.rho.abs() < 1.0) {
                return Err(Error::InvalidConfig(format!("|rho| = {} must be below 1", o.rho.abs())));
            }
            sigma[(o.i - 1, o.j - 1)] = o.rho;
            sigma[(o.j - 1, o.i - 1)] = o.rho;
        }
        Ok(sigma)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::InvalidConfig("n_samples must be at least 2".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise_sd {} must be >= 0", self.noise_sd)));
        }
        let sigma = self.covariance()?;
        sigma.cholesky().map(|_| ()).ok_or(Error::NotPositiveDefinite)
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=N_LATENT).map(|k| format!("x{k}")).collect();
        if self.add_noise_feature {
            names.push(NOISE_FEATURE.into());
        }
        names
    }
}

/// Draws the synthetic table described in the module docs.
pub fn generate_toy(config: &ToyConfig) -> Result<DataTable> {
    config.validate()?;
    let n = config.n_samples;
    let chol = config.covariance()?.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let lower = chol.l();

    let mut gauss_rng = rng_from(&[tag::TOY, config.seed, 0]);
    let mut latent = DMatrix::<f64>::zeros(n, N_LATENT);
    for r in 0..n {
        let z = DVector::<f64>::from_fn(N_LATENT, |_, _| StandardNormal.sample(&mut gauss_rng));
        latent.row_mut(r).copy_from(&(&lower * z).transpose());
    }
    let score: Vec<f64> = (0..n)
        .map(|r| (0..N_LATENT).map(|c| COEFFICIENTS[c] * latent[(r, c)]).sum())
        .collect();
    let mean_score = score.iter().sum::<f64>() / n as f64;

    let mut eps_rng = rng_from(&[tag::TOY, config.seed, 1]);
    let eps = Normal::new(0.0, config.noise_sd).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let y: Vec<u8> = score
        .iter()
        .map(|&s| u8::from(s + eps.sample(&mut eps_rng) >= mean_score))
        .collect();

    let m = N_LATENT + usize::from(config.add_noise_feature);
    let mut x = ndarray::Array2::<f64>::zeros((n, m));
    match config.uniform_transform {
        UniformTransform::NormalCdf => {
            let phi = NormalDist::standard();
            for r in 0..n {
                for c in 0..N_LATENT {
                    x[[r, c]] = phi.cdf(latent[(r, c)]);
                }
            }
        }
        UniformTransform::EmpiricalRank => {
            for c in 0..N_LATENT {
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| latent[(a, c)].total_cmp(&latent[(b, c)]));
                for (rank, &r) in order.iter().enumerate() {
                    x[[r, c]] = (rank + 1) as f64 / (n + 1) as f64;
                }
            }
        }
    }
    if config.add_noise_feature {
        let mut noise_rng = rng_from(&[tag::TOY, config.seed, 2]);
        for r in 0..n {
            x[[r, N_LATENT]] = noise_rng.random::<f64>();
        }
    }
    DataTable::new(config.feature_names(), x, y)
}

/// The three reference experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// `x1`, `x2` correlated; pairwise importance.
    PairPpa,
    /// Same data as [`Scenario::PairPpa`]; single-feature relearn importance.
    PairSpi,
    /// `x1`, `x6` correlated; pairwise importance.
    IrrelevantPpa,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::PairPpa, Scenario::PairSpi, Scenario::IrrelevantPpa];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::PairPpa => "A_pair_ppa",
            Scenario::PairSpi => "B_pair_spi",
            Scenario::IrrelevantPpa => "C_irrelevant_ppa",
        }
    }

    pub fn toy_config(self, seed: u64) -> ToyConfig {
        let base = match self {
            Scenario::PairPpa | Scenario::PairSpi => ToyConfig::scenario_pair(),
            Scenario::IrrelevantPpa => ToyConfig::scenario_irrelevant(),
        };
        ToyConfig { seed, ..base }
    }

    pub fn importance_config(self, seed: u64) -> ImportanceConfig {
        let method = match self {
            Scenario::PairSpi => Method::Spi,
            _ => Method::Ppa,
        };
        ImportanceConfig {
            method,
            alpha: 0.3,
            n_splits: 50,
            test_fraction: 0.3,
            seed,
            ..ImportanceConfig::default()
        }
    }

    pub fn manifest(self, seed: u64) -> Manifest {
        Manifest::new(
            DataSource::Toy {
                scenario: Some(self.name().to_string()),
                config: self.toy_config(seed),
            },
            self.importance_config(seed),
        )
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown scenario '{s}' (expected one of A_pair_ppa, B_pair_spi, C_irrelevant_ppa)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub report: ImportanceReport,
    pub mean_auc: f64,
    pub auc_sd: f64,
}

impl From<ImportanceReport> for ScenarioResult {
    fn from(report: ImportanceReport) -> Self {
        Self {
            mean_auc: report.mean_auc,
            auc_sd: report.auc_sd,
            report,
        }
    }
}

/// Generates the scenario's data and runs its importance protocol.
pub fn run_scenario(scenario: Scenario, base_seed: u64) -> Result<ScenarioResult> {
    let table = generate_toy(&scenario.toy_config(base_seed))?;
    Ok(run_importance(&table, &scenario.importance_config(base_seed))?.into())
}
