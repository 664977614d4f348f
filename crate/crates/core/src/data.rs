//! Tabular data: loading, scaling, count preprocessing and split generation.

use std::collections::HashSet;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::index;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from, tag};

/// Named feature matrix plus a binary label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    feature_names: Vec<String>,
    x: Array2<f64>,
    y: Vec<u8>,
}

impl DataTable {
    pub fn new(feature_names: Vec<String>, x: Array2<f64>, y: Vec<u8>) -> Result<Self> {
        if x.ncols() != feature_names.len() {
            return Err(Error::InvalidTable(format!(
                "{} columns but {} feature names",
                x.ncols(),
                feature_names.len()
            )));
        }
        if x.nrows() != y.len() {
            return Err(Error::InvalidTable(format!(
                "{} rows but {} labels",
                x.nrows(),
                y.len()
            )));
        }
        check_unique(&feature_names)?;
        if let Some(((r, c), v)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::BadCell {
                row: r,
                column: feature_names[c].clone(),
                message: format!("non-finite value {v}"),
            });
        }
        if let Some(v) = y.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidTable(format!("label {v} is not 0 or 1")));
        }
        Ok(Self {
            feature_names,
            x,
            y,
        })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    /// Rows at `indices`, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> DataTable {
        DataTable {
            feature_names: self.feature_names.clone(),
            x: self.x.select(Axis(0), indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// Same labels and names, new feature matrix of identical shape.
    pub(crate) fn with_x(&self, x: Array2<f64>) -> DataTable {
        debug_assert_eq!(x.dim(), self.x.dim());
        DataTable {
            feature_names: self.feature_names.clone(),
            x,
            y: self.y.clone(),
        }
    }

    /// Writes the table as CSV with the features followed by a `label` column.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&self.feature_names.join(","));
        out.push_str(",label\n");
        for (row, &label) in self.x.rows().into_iter().zip(&self.y) {
            for v in row {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{label}\n"));
        }
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn check_unique(names: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(Error::InvalidTable(format!("duplicate feature name '{n}'")));
        }
    }
    Ok(())
}

/// How the label column's text maps to {0, 1}.
#[derive(Debug, Clone, Default)]
pub enum LabelMapping {
    /// Values must already be 0 or 1.
    #[default]
    Numeric,
    /// This value is the positive class; exactly one other value may appear
    /// and maps to 0.
    Positive(String),
}

/// Loads a comma-separated file with a header row.
pub fn load_csv(path: &Path, label_column: &str, mapping: &LabelMapping) -> Result<DataTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingLabelColumn(label_column.to_string()))?;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    check_unique(&feature_names)?;

    let mut values = Vec::new();
    let mut y = Vec::new();
    let mut negative: Option<String> = None;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        // 1-based data row, header excluded
        let row = r + 1;
        for (c, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if c == label_idx {
                y.push(parse_label(cell, row, label_column, mapping, &mut negative)?);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::NonNumericCell {
                row,
                column: header[c].clone(),
                token: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::BadCell {
                    row,
                    column: header[c].clone(),
                    message: format!("non-finite value '{cell}'"),
                });
            }
            values.push(v);
        }
    }
    let x = Array2::from_shape_vec((y.len(), feature_names.len()), values)
        .map_err(|e| Error::InvalidTable(e.to_string()))?;
    DataTable::new(feature_names, x, y)
}

fn parse_label(
    cell: &str,
    row: usize,
    column: &str,
    mapping: &LabelMapping,
    negative: &mut Option<String>,
) -> Result<u8> {
    let bad = || Error::NonBinaryLabel {
        row,
        column: column.to_string(),
        value: cell.to_string(),
    };
    match mapping {
        LabelMapping::Numeric => match cell.parse::<f64>() {
            Ok(v) if v == 0.0 => Ok(0),
            Ok(v) if v == 1.0 => Ok(1),
            _ => Err(bad()),
        },
        LabelMapping::Positive(pos) => {
            if cell == pos {
                return Ok(1);
            }
            match negative {
                Some(neg) if neg == cell => Ok(0),
                Some(_) => Err(bad()),
                None => {
                    *negative = Some(cell.to_string());
                    Ok(0)
                }
            }
        }
    }
}

/// Per-column standardization parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Population mean and standard deviation over the rows in `fit_indices`.
    pub fn fit(x: &Array2<f64>, fit_indices: &[usize]) -> Result<Scaler> {
        if fit_indices.is_empty() {
            return Err(Error::Empty("fit_indices"));
        }
        if let Some(&i) = fit_indices.iter().find(|&&i| i >= x.nrows()) {
            return Err(Error::IndexOutOfBounds {
                index: i,
                len: x.nrows(),
            });
        }
        let n = fit_indices.len() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let m = fit_indices.iter().map(|&i| col[i]).sum::<f64>() / n;
            let var = fit_indices.iter().map(|&i| (col[i] - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            std.push(var.sqrt());
        }
        Ok(Scaler { mean, std })
    }

    /// Applies `(x - mean) / std`; zero-variance columns become all zeros.
    pub fn transform(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::WidthMismatch {
                expected: self.mean.len(),
                actual: x.ncols(),
            });
        }
        let mut out = x.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            if s > 0.0 {
                col.mapv_inplace(|v| (v - m) / s);
            } else {
                col.fill(0.0);
            }
        }
        Ok(out)
    }
}

/// Standardizes every column using statistics from `fit_indices` only.
pub fn standard_scale(table: &DataTable, fit_indices: &[usize]) -> Result<DataTable> {
    let scaler = Scaler::fit(table.x(), fit_indices)?;
    Ok(table.with_x(scaler.transform(table.x())?))
}

/// Integer read counts, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTable {
    feature_names: Vec<String>,
    sample_ids: Vec<String>,
    counts: Array2<u64>,
}

impl CountTable {
    pub fn new(feature_names: Vec<String>, sample_ids: Vec<String>, counts: Array2<u64>) -> Result<Self> {
        if counts.ncols() != feature_names.len() || counts.nrows() != sample_ids.len() {
            return Err(Error::InvalidTable(format!(
                "count matrix is {}x{} but there are {} sample ids and {} feature names",
                counts.nrows(),
                counts.ncols(),
                sample_ids.len(),
                feature_names.len()
            )));
        }
        check_unique(&feature_names)?;
        Ok(Self {
            feature_names,
            sample_ids,
            counts,
        })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    pub fn row_totals(&self) -> Vec<u64> {
        self.counts.rows().into_iter().map(|r| r.sum()).collect()
    }

    /// Reads a CSV whose first column holds sample ids and whose remaining
    /// columns hold non-negative integer counts.
    pub fn load_csv(path: &Path) -> Result<CountTable> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if header.is_empty() {
            return Err(Error::InvalidTable("empty header".into()));
        }
        let feature_names = header[1..].to_vec();
        let mut sample_ids = Vec::new();
        let mut values = Vec::new();
        for (r, record) in reader.records().enumerate() {
            let record = record?;
            let row = r + 1;
            let mut cells = record.iter();
            sample_ids.push(cells.next().unwrap_or("").trim().to_string());
            for (c, cell) in cells.enumerate() {
                let cell = cell.trim();
                let v: u64 = cell.parse().map_err(|_| Error::BadCell {
                    row,
                    column: header[c + 1].clone(),
                    message: format!("'{cell}' is not a non-negative integer count"),
                })?;
                values.push(v);
            }
        }
        let counts = Array2::from_shape_vec((sample_ids.len(), feature_names.len()), values)
            .map_err(|e| Error::InvalidTable(e.to_string()))?;
        CountTable::new(feature_names, sample_ids, counts)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("sample_id");
        for n in &self.feature_names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (id, row) in self.sample_ids.iter().zip(self.counts.rows()) {
            out.push_str(id);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Subsamples every row to exactly `depth` reads, drawing reads uniformly
/// without replacement.
pub fn rarefy(counts: &CountTable, depth: u64, seed: u64) -> Result<CountTable> {
    if depth == 0 {
        return Err(Error::InvalidConfig("rarefaction depth must be positive".into()));
    }
    let totals = counts.row_totals();
    if let Some((r, &t)) = totals.iter().enumerate().find(|(_, &t)| t < depth) {
        return Err(Error::InsufficientDepth {
            sample: counts.sample_ids[r].clone(),
            total: t,
            depth,
        });
    }
    let mut out = Array2::<u64>::zeros(counts.counts.dim());
    for (r, (row, total)) in counts.counts.rows().into_iter().zip(totals).enumerate() {
        let mut out_row = out.row_mut(r);
        if total == depth {
            out_row.assign(&row);
            continue;
        }
        let total = usize::try_from(total).map_err(|_| Error::Numerical("read total overflows usize".into()))?;
        let mut rng = rng_from(&[tag::RAREFY, seed, r as u64]);
        let mut picked = index::sample(&mut rng, total, depth as usize).into_vec();
        picked.sort_unstable();
        // walk the sorted read positions against cumulative category bounds
        let mut cat = 0usize;
        let mut upper = row[0] as usize;
        for pos in picked {
            while pos >= upper {
                cat += 1;
                upper += row[cat] as usize;
            }
            out_row[cat] += 1;
        }
    }
    CountTable::new(counts.feature_names.clone(), counts.sample_ids.clone(), out)
}

/// Keeps the features whose mean count per sample is at least `min_mean_reads`.
pub fn filter_low_abundance(counts: &CountTable, min_mean_reads: f64) -> CountTable {
    let n = counts.counts.nrows().max(1) as f64;
    let keep: Vec<usize> = counts
        .counts
        .columns()
        .into_iter()
        .enumerate()
        .filter(|(_, col)| col.iter().map(|&v| v as f64).sum::<f64>() / n >= min_mean_reads)
        .map(|(j, _)| j)
        .collect();
    CountTable {
        feature_names: keep.iter().map(|&j| counts.feature_names[j].clone()).collect(),
        sample_ids: counts.sample_ids.clone(),
        counts: counts.counts.select(Axis(1), &keep),
    }
}

/// One train/test partition; both index lists are sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub splits: Vec<Split>,
    pub test_fraction: f64,
    pub seed: u64,
}

fn class_indices(y: &[u8]) -> [Vec<usize>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for (i, &v) in y.iter().enumerate() {
        out[usize::from(v != 0)].push(i);
    }
    out
}

/// Number of test rows drawn from each class: proportional shares of
/// `round(test_fraction * n)` with the remainder handed out by largest
/// fractional part.
fn test_allocation(class_sizes: [usize; 2], test_fraction: f64) -> [usize; 2] {
    let n = class_sizes[0] + class_sizes[1];
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(2, n - 2);
    let shares = class_sizes.map(|c| n_test as f64 * c as f64 / n as f64);
    let mut alloc = shares.map(|s| s.floor() as usize);
    if alloc[0] + alloc[1] < n_test {
        let frac0 = shares[0] - shares[0].floor();
        let frac1 = shares[1] - shares[1].floor();
        let winner = if frac1 > frac0 { 1 } else { 0 };
        alloc[winner] += 1;
    }
    for c in 0..2 {
        alloc[c] = alloc[c].clamp(1, class_sizes[c] - 1);
    }
    // move rows lost to clamping onto the class that still has room
    let total = alloc[0] + alloc[1];
    if total < n_test {
        let mut deficit = n_test - total;
        for c in 0..2 {
            let give = deficit.min(class_sizes[c] - 1 - alloc[c]);
            alloc[c] += give;
            deficit -= give;
        }
    } else if total > n_test {
        let mut excess = total - n_test;
        for c in 0..2 {
            let take = excess.min(alloc[c] - 1);
            alloc[c] -= take;
            excess -= take;
        }
    }
    alloc
}

/// Repeated stratified random train/test partitions.
pub fn stratified_shuffle_split(
    y: &[u8],
    n_splits: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<SplitPlan> {
    if n_splits == 0 {
        return Err(Error::InvalidConfig("n_splits must be at least 1".into()));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test_fraction {test_fraction} not in (0, 1)"
        )));
    }
    let classes = class_indices(y);
    for (c, members) in classes.iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::ClassTooSmall {
                class: c as u8,
                count: members.len(),
                required: 2,
            });
        }
    }
    let alloc = test_allocation([classes[0].len(), classes[1].len()], test_fraction);
    let splits = (0..n_splits)
        .map(|s| {
            let mut rng = rng_from(&[tag::SPLIT, seed, s as u64]);
            let mut train = Vec::with_capacity(y.len());
            let mut test = Vec::new();
            for (c, members) in classes.iter().enumerate() {
                let mut shuffled = members.clone();
                shuffled.shuffle(&mut rng);
                test.extend_from_slice(&shuffled[..alloc[c]]);
                train.extend_from_slice(&shuffled[alloc[c]..]);
            }
            train.sort_unstable();
            test.sort_unstable();
            Split { train, test }
        })
        .collect();
    Ok(SplitPlan {
        splits,
        test_fraction,
        seed,
    })
}

/// Stratified k-fold partition; returns the held-out indices of each fold.
///
/// Each class is shuffled, the classes are laid end to end, and position `p`
/// goes to fold `p mod k`, so fold sizes differ by at most one.
pub fn stratified_kfold(y: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidConfig("k must be at least 2".into()));
    }
    let classes = class_indices(y);
    for (c, members) in classes.iter().enumerate() {
        if members.len() < k {
            return Err(Error::ClassTooSmall {
                class: c as u8,
                count: members.len(),
                required: k,
            });
        }
    }
    let mut rng = rng_from(&[tag::KFOLD, seed]);
    let mut folds = vec![Vec::new(); k];
    let mut pos = 0usize;
    for members in &classes {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        for idx in shuffled {
            folds[pos % k].push(idx);
            pos += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}
