//! Multi-split importance runs, their reports and reproducible manifests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::{pearson_matrix, CorrelationMatrix};
use crate::data::{load_csv, stratified_shuffle_split, DataTable, LabelMapping, Scaler};
use crate::error::{Error, Result};
use crate::importance::{
    aggregate_ranks, fisher_run, pairs_above_threshold, ppa_run, spi_run, Baseline, ImportanceLoss, JensenRecord, Method,
    SplitTask,
};
use crate::learners::{cv_scores_or_single, default_grid, LearnerSpec};
use crate::rng::derive_seed;
use crate::toy::{generate_toy, ToyConfig};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Rows used to estimate the correlation weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationScope {
    /// The current split's training rows.
    #[default]
    Train,
    /// Every row of the dataset, computed once.
    Full,
}

/// Rows used to fit the standardization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingScope {
    /// Each split's training rows.
    #[default]
    PerSplit,
    /// All rows, once.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceConfig {
    pub method: Method,
    pub alpha: f64,
    pub n_splits: usize,
    pub test_fraction: f64,
    pub family: String,
    /// Overrides the family's default grid when present.
    pub grid: Option<Vec<LearnerSpec>>,
    pub cv_folds: usize,
    pub loss: ImportanceLoss,
    pub correlation_scope: CorrelationScope,
    pub scaling_scope: ScalingScope,
    pub seed: u64,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        Self {
            method: Method::Ppa,
            alpha: 0.3,
            n_splits: 50,
            test_fraction: 0.3,
            family: "gbt".into(),
            grid: None,
            cv_folds: 5,
            loss: ImportanceLoss::Logloss,
            correlation_scope: CorrelationScope::Train,
            scaling_scope: ScalingScope::PerSplit,
            seed: 0,
        }
    }
}

impl ImportanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha {} not in [0, 1)", self.alpha)));
        }
        if self.n_splits == 0 {
            return Err(Error::InvalidConfig("n_splits must be at least 1".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!("test_fraction {} not in (0, 1)", self.test_fraction)));
        }
        if self.cv_folds < 2 {
            return Err(Error::InvalidConfig("cv_folds must be at least 2".into()));
        }
        match &self.grid {
            Some(g) if g.is_empty() => return Err(Error::InvalidConfig("grid override is empty".into())),
            Some(g) => g.iter().try_for_each(LearnerSpec::validate)?,
            None => {
                default_grid(&self.family, self.seed)?;
            }
        }
        Ok(())
    }

    fn grid(&self) -> Result<Vec<LearnerSpec>> {
        match &self.grid {
            Some(g) => Ok(g.clone()),
            None => default_grid(&self.family, self.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub spec: LearnerSpec,
    pub mean_auc: f64,
}

/// Full result of a multi-split importance run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub schema_version: u32,
    pub method: Method,
    pub alpha: f64,
    pub loss: ImportanceLoss,
    pub correlation_scope: CorrelationScope,
    pub scaling_scope: ScalingScope,
    pub seed: u64,
    pub n_splits: usize,
    pub test_fraction: f64,
    pub feature_names: Vec<String>,
    pub selected_spec: LearnerSpec,
    /// Cross-validated AUC of every grid entry; empty for a single-entry grid.
    pub grid_scores: Vec<GridEntry>,
    pub per_split_values: Vec<Vec<f64>>,
    pub per_split_ranks: Vec<Vec<f64>>,
    pub avg_rank: Vec<f64>,
    pub rank_stderr: Vec<f64>,
    pub mean_importance: Vec<f64>,
    pub auc_per_split: Vec<f64>,
    pub mean_auc: f64,
    pub auc_sd: f64,
    /// Off-diagonal pairs retrained in each split.
    pub realized_pairs: Vec<Vec<(usize, usize)>>,
    pub retrains_per_split: Vec<usize>,
    pub jensen_records: Vec<JensenRecord>,
}

impl ImportanceReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Flat per-feature table.
    pub fn ranks_csv(&self) -> String {
        let method = serde_json::to_value(self.method)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        let mut out = String::from("feature,avg_rank,rank_stderr,mean_importance,method,alpha\n");
        for (f, name) in self.feature_names.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                name, self.avg_rank[f], self.rank_stderr[f], self.mean_importance[f], method, self.alpha
            );
        }
        out
    }

    /// Feature indices ordered by average rank, best first.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.feature_names.len()).collect();
        idx.sort_by(|&a, &b| self.avg_rank[a].total_cmp(&self.avg_rank[b]).then(a.cmp(&b)));
        idx
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// Text table of the `k` best-ranked features.
    pub fn top_table(&self, k: usize) -> String {
        let mut out = format!("{:>4}  {:<20} {:>9} {:>8} {:>12}\n", "#", "feature", "avg_rank", "stderr", "importance");
        for (pos, &f) in self.ranking().iter().take(k).enumerate() {
            let _ = writeln!(
                out,
                "{:>4}  {:<20} {:>9.3} {:>8.3} {:>12.5}",
                pos + 1,
                self.feature_names[f],
                self.avg_rank[f],
                self.rank_stderr[f],
                self.mean_importance[f]
            );
        }
        out
    }

    pub fn summary_line(&self) -> String {
        format!("mean AUC {:.4} ± {:.4} over {} splits", self.mean_auc, self.auc_sd, self.n_splits)
    }
}

struct SplitResult {
    values: Vec<f64>,
    auc: f64,
    pairs: Vec<(usize, usize)>,
    retrains: usize,
    jensen: Vec<JensenRecord>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Runs `config.method` over `config.n_splits` stratified splits of `table`.
///
/// Hyperparameters are chosen once, by cross-validation on the first split's
/// training rows, and reused for every baseline and permuted retrain.
pub fn run_importance(table: &DataTable, config: &ImportanceConfig) -> Result<ImportanceReport> {
    config.validate()?;
    let plan = stratified_shuffle_split(table.y(), config.n_splits, config.test_fraction, config.seed)?;
    let all_rows: Vec<usize> = (0..table.n_rows()).collect();
    let global_scaler = match config.scaling_scope {
        ScalingScope::Global => Some(Scaler::fit(table.x(), &all_rows)?),
        ScalingScope::PerSplit => None,
    };
    let full_r = match config.correlation_scope {
        CorrelationScope::Full => Some(pearson_matrix(table.x(), table.feature_names())?),
        CorrelationScope::Train => None,
    };

    let prepare = |train_idx: &[usize], test_idx: &[usize]| -> Result<(DataTable, DataTable)> {
        let scaler = match &global_scaler {
            Some(s) => s.clone(),
            None => Scaler::fit(table.x(), train_idx)?,
        };
        let scaled = table.with_x(scaler.transform(table.x())?);
        Ok((scaled.select_rows(train_idx), scaled.select_rows(test_idx)))
    };

    let (first_train, _) = prepare(&plan.splits[0].train, &plan.splits[0].test)?;
    let grid = config.grid()?;
    let scores = cv_scores_or_single(&grid, first_train.x(), first_train.y(), config.cv_folds, config.seed)?;
    let selected = scores.selected.clone();
    let grid_scores = scores
        .scores
        .into_iter()
        .map(|s| GridEntry {
            spec: s.spec,
            mean_auc: s.mean_auc,
        })
        .collect();

    let results: Vec<SplitResult> = plan
        .splits
        .par_iter()
        .enumerate()
        .map(|(split_id, split)| {
            let (train, test) = prepare(&split.train, &split.test)?;
            let train_seed = derive_seed(&[config.seed, split_id as u64]);
            let baseline = Baseline::fit(&selected, &train, &test, train_seed, config.loss)?;
            let task = SplitTask {
                spec: &selected,
                train: &train,
                test: &test,
                baseline: &baseline,
                run_seed: config.seed,
                train_seed,
                split_id,
                loss: config.loss,
            };
            let auc = baseline.test_auc;
            match config.method {
                Method::Ppa => {
                    let r: CorrelationMatrix = match &full_r {
                        Some(r) => r.clone(),
                        None => pearson_matrix(train.x(), train.feature_names())?,
                    };
                    let out = ppa_run(&task, &r, config.alpha)?;
                    let pairs = pairs_above_threshold(&r, config.alpha)
                        .into_iter()
                        .filter(|(i, j)| i != j)
                        .collect();
                    Ok(SplitResult {
                        retrains: out.retrains(),
                        values: out.ppi,
                        auc,
                        pairs,
                        jensen: out.jensen,
                    })
                }
                Method::Spi => {
                    let out = spi_run(&task)?;
                    Ok(SplitResult {
                        retrains: out.spi.len(),
                        values: out.spi,
                        auc,
                        pairs: Vec::new(),
                        jensen: out.jensen,
                    })
                }
                Method::Fisher => {
                    let out = fisher_run(&task)?;
                    Ok(SplitResult {
                        retrains: 0,
                        values: out.spi,
                        auc,
                        pairs: Vec::new(),
                        jensen: out.jensen,
                    })
                }
            }
        })
        .collect::<Result<_>>()?;

    let per_split_values: Vec<Vec<f64>> = results.iter().map(|r| r.values.clone()).collect();
    if per_split_values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite importance value".into()));
    }
    let ranks = aggregate_ranks(&per_split_values)?;
    let m = table.n_features();
    let mean_importance = (0..m)
        .map(|f| per_split_values.iter().map(|r| r[f]).sum::<f64>() / per_split_values.len() as f64)
        .collect();
    let auc_per_split: Vec<f64> = results.iter().map(|r| r.auc).collect();
    let (mean_auc, auc_sd) = mean_sd(&auc_per_split);

    Ok(ImportanceReport {
        schema_version: REPORT_SCHEMA_VERSION,
        method: config.method,
        alpha: config.alpha,
        loss: config.loss,
        correlation_scope: config.correlation_scope,
        scaling_scope: config.scaling_scope,
        seed: config.seed,
        n_splits: config.n_splits,
        test_fraction: config.test_fraction,
        feature_names: table.feature_names().to_vec(),
        selected_spec: selected,
        grid_scores,
        per_split_values,
        per_split_ranks: ranks.per_split_ranks,
        avg_rank: ranks.avg_rank,
        rank_stderr: ranks.rank_stderr,
        mean_importance,
        auc_per_split,
        mean_auc,
        auc_sd,
        realized_pairs: results.iter().map(|r| r.pairs.clone()).collect(),
        retrains_per_split: results.iter().map(|r| r.retrains).collect(),
        jensen_records: results.into_iter().flat_map(|r| r.jensen).collect(),
    })
}

/// Where a run's table comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Csv {
        path: PathBuf,
        label_column: String,
        positive_label: Option<String>,
    },
    Toy {
        #[serde(skip_serializing_if = "Option::is_none", default)]
        scenario: Option<String>,
        config: ToyConfig,
    },
}

impl DataSource {
    pub fn load(&self) -> Result<DataTable> {
        match self {
            DataSource::Csv {
                path,
                label_column,
                positive_label,
            } => {
                let mapping = match positive_label {
                    Some(p) => LabelMapping::Positive(p.clone()),
                    None => LabelMapping::Numeric,
                };
                load_csv(path, label_column, &mapping)
            }
            DataSource::Toy { config, .. } => generate_toy(config),
        }
    }
}

/// Every resolved input of a run; replaying it reproduces the reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub source: DataSource,
    pub config: ImportanceConfig,
}

impl Manifest {
    pub fn new(source: DataSource, config: ImportanceConfig) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            source,
            config,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!("unsupported manifest schema {}", m.schema_version)));
        }
        Ok(m)
    }

    pub fn execute(&self) -> Result<ImportanceReport> {
        let table = self.source.load()?;
        run_importance(&table, &self.config)
    }
}

/// Writes `manifest.json`, `report.json` and `ranks.csv` into `dir`.
pub fn write_outputs(dir: &Path, manifest: &Manifest, report: &ImportanceReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    write("manifest.json", serde_json::to_string_pretty(manifest)? + "\n")?;
    write("report.json", report.to_json()?)?;
    write("ranks.csv", report.ranks_csv())
}

/// Re-executes the manifest at `manifest_path` and writes fresh outputs to `out_dir`.
pub fn replay(manifest_path: &Path, out_dir: &Path) -> Result<ImportanceReport> {
    let manifest = Manifest::load(manifest_path)?;
    let report = manifest.execute()?;
    write_outputs(out_dir, &manifest, &report)?;
    Ok(report)
}

/// Runs `f` on a dedicated pool of `workers` threads, or on the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        Some(n) if n > 0 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(f))
        }
        _ => Ok(f()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::LogisticParams;

    fn quick_config(method: Method) -> ImportanceConfig {
        ImportanceConfig {
            method,
            n_splits: 3,
            family: "logistic".into(),
            grid: Some(vec![LearnerSpec::logistic(LogisticParams::default(), 0)]),
            seed: 5,
            ..ImportanceConfig::default()
        }
    }

    fn toy() -> DataTable {
        generate_toy(&ToyConfig {
            n_samples: 200,
            ..ToyConfig::scenario_pair()
        })
        .unwrap()
    }

    #[test]
    fn config_validation() {
        let bad = ImportanceConfig {
            alpha: 1.5,
            ..ImportanceConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
        let bad = ImportanceConfig {
            family: "svm".into(),
            ..ImportanceConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(ImportanceConfig::default().validate().is_ok());
    }

    #[test]
    fn report_shapes() {
        let t = toy();
        for method in [Method::Ppa, Method::Spi, Method::Fisher] {
            let rep = run_importance(&t, &quick_config(method)).unwrap();
            assert_eq!(rep.per_split_values.len(), 3);
            assert_eq!(rep.avg_rank.len(), 11);
            assert_eq!(rep.auc_per_split.len(), 3);
            assert!(rep.mean_auc > 0.8);
            let csv = rep.ranks_csv();
            assert_eq!(csv.lines().count(), 12);
            assert!(csv.starts_with("feature,avg_rank,rank_stderr,mean_importance,method,alpha\n"));
            for r in &rep.jensen_records {
                assert!(r.mean_abs_diff >= r.abs_mean_diff - 1e-12);
            }
        }
    }

    #[test]
    fn ppa_realizes_the_correlated_pair() {
        let rep = run_importance(&toy(), &quick_config(Method::Ppa)).unwrap();
        for (pairs, retrains) in rep.realized_pairs.iter().zip(&rep.retrains_per_split) {
            assert_eq!(pairs, &[(0, 1)]);
            assert_eq!(*retrains, 12);
        }
    }

    #[test]
    fn scopes_and_workers_do_not_break_determinism() {
        let t = toy();
        let cfg = ImportanceConfig {
            correlation_scope: CorrelationScope::Full,
            scaling_scope: ScalingScope::Global,
            ..quick_config(Method::Ppa)
        };
        let a = with_workers(Some(1), || run_importance(&t, &cfg)).unwrap().unwrap();
        let b = with_workers(Some(3), || run_importance(&t, &cfg)).unwrap().unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn manifest_round_trip() {
        let m = Manifest::new(
            DataSource::Toy {
                scenario: Some("A_pair_ppa".into()),
                config: ToyConfig::scenario_pair(),
            },
            quick_config(Method::Spi),
        );
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<Manifest>(&json).unwrap(), m);
    }
}
