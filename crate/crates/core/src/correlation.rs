//! Pearson correlation matrix and thresholded permutation partners.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    values: Array2<f64>,
    feature_names: Vec<String>,
}

impl CorrelationMatrix {
    /// Wraps a precomputed matrix. It must be square, symmetric and match the
    /// name list.
    pub fn from_values(values: Array2<f64>, feature_names: Vec<String>) -> Result<Self> {
        let m = feature_names.len();
        if values.dim() != (m, m) {
            return Err(Error::WidthMismatch {
                expected: m,
                actual: values.ncols(),
            });
        }
        for i in 0..m {
            for j in 0..i {
                if (values[[i, j]] - values[[j, i]]).abs() > 1e-12 {
                    return Err(Error::InvalidTable(format!("correlation matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self {
            values,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.feature_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feature_names.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Largest absolute off-diagonal entry, 0 for a single feature.
    pub fn max_off_diagonal(&self) -> f64 {
        let m = self.len();
        let mut best = 0.0f64;
        for i in 0..m {
            for j in (i + 1)..m {
                best = best.max(self.values[[i, j]].abs());
            }
        }
        best
    }

    /// CSV with a header row and a leading column of feature names.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature");
        for n in &self.feature_names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (name, row) in self.feature_names.iter().zip(self.values.rows()) {
            out.push_str(name);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Sample Pearson correlation between every pair of columns.
///
/// A constant column correlates 0 with everything else and 1 with itself.
pub fn pearson_matrix(x: &Array2<f64>, column_names: &[String]) -> Result<CorrelationMatrix> {
    let (n, m) = x.dim();
    if n < 2 {
        return Err(Error::InvalidTable(format!("correlation needs at least 2 rows, got {n}")));
    }
    if column_names.len() != m {
        return Err(Error::WidthMismatch {
            expected: column_names.len(),
            actual: m,
        });
    }
    let centered: Vec<Vec<f64>> = x
        .columns()
        .into_iter()
        .map(|col| {
            let mean = col.sum() / n as f64;
            col.iter().map(|v| v - mean).collect()
        })
        .collect();
    let norms: Vec<f64> = centered
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();

    let mut r = Array2::<f64>::eye(m);
    for i in 0..m {
        for j in (i + 1)..m {
            let v = if norms[i] > 0.0 && norms[j] > 0.0 {
                let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            r[[i, j]] = v;
            r[[j, i]] = v;
        }
    }
    Ok(CorrelationMatrix {
        values: r,
        feature_names: column_names.to_vec(),
    })
}

/// Every `j` with `|R[i, j]| > alpha`, ascending. Always contains `i`.
pub fn partners_above_threshold(r: &CorrelationMatrix, i: usize, alpha: f64) -> Vec<usize> {
    (0..r.len())
        .filter(|&j| j == i || r.get(i, j).abs() > alpha)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    use statrs::distribution::{ContinuousCDF, Normal};

    fn names(m: usize) -> Vec<String> {
        (0..m).map(|j| format!("x{}", j + 1)).collect()
    }

    #[test]
    fn self_and_negated() {
        let x = array![[1.0, -1.0, 3.0], [2.0, -2.0, 1.0], [4.0, -4.0, 2.0], [0.5, -0.5, 7.0]];
        let r = pearson_matrix(&x, &names(3)).unwrap();
        assert!((r.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((r.get(0, 1) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_column_convention() {
        let x = array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]];
        let r = pearson_matrix(&x, &names(2)).unwrap();
        assert_eq!(r.get(0, 1), 0.0);
        assert_eq!(r.get(1, 1), 1.0);
    }

    #[test]
    fn too_few_rows() {
        assert!(pearson_matrix(&array![[1.0, 2.0]], &names(2)).is_err());
    }

    #[test]
    fn gaussian_copula_uniform_margins() {
        // Pearson of Phi(Z1), Phi(Z2) with corr(Z1, Z2) = rho is (6/pi) asin(rho/2)
        let rho: f64 = 0.9;
        let expected = 6.0 / std::f64::consts::PI * (rho / 2.0).asin();
        assert!((expected - 0.8915).abs() < 1e-4);
        let phi = Normal::standard();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let n = 100_000;
        let mut x = Array2::<f64>::zeros((n, 2));
        for i in 0..n {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            x[[i, 0]] = phi.cdf(a);
            x[[i, 1]] = phi.cdf(rho * a + (1.0 - rho * rho).sqrt() * b);
        }
        let r = pearson_matrix(&x, &names(2)).unwrap();
        assert!((r.get(0, 1) - expected).abs() < 0.01, "{}", r.get(0, 1));
    }

    fn matrix_with(m: usize, entries: &[(usize, usize, f64)]) -> CorrelationMatrix {
        let mut v = Array2::<f64>::eye(m);
        for &(i, j, r) in entries {
            v[[i, j]] = r;
            v[[j, i]] = r;
        }
        CorrelationMatrix::from_values(v, names(m)).unwrap()
    }

    #[test]
    fn partners_examples() {
        let id = matrix_with(4, &[]);
        assert_eq!(partners_above_threshold(&id, 2, 0.3), [2]);

        let r = matrix_with(3, &[(0, 1, 0.9), (0, 2, 0.1)]);
        assert_eq!(partners_above_threshold(&r, 0, 0.3), [0, 1]);
        // strict inequality
        assert_eq!(partners_above_threshold(&r, 0, 0.9), [0]);

        let r = matrix_with(4, &[(0, 1, 0.2), (0, 3, -0.05)]);
        let brute: Vec<usize> = (0..4).filter(|&j| j == 0 || r.get(0, j) != 0.0).collect();
        assert_eq!(partners_above_threshold(&r, 0, 0.0), brute);
    }

    #[test]
    fn csv_export() {
        let r = matrix_with(2, &[(0, 1, 0.5)]);
        assert_eq!(r.to_csv(), "feature,x1,x2\nx1,1,0.5\nx2,0.5,1\n");
    }

    proptest! {
        #[test]
        fn affine_invariance(vals in prop::collection::vec(-10.0f64..10.0, 30), a in 0.1f64..50.0, b in -20.0f64..20.0, col in 0usize..3) {
            let x = Array2::from_shape_vec((10, 3), vals).unwrap();
            let mut y = x.clone();
            y.column_mut(col).mapv_inplace(|v| a * v + b);
            let r1 = pearson_matrix(&x, &names(3)).unwrap();
            let r2 = pearson_matrix(&y, &names(3)).unwrap();
            for (p, q) in r1.values().iter().zip(r2.values()) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }

        #[test]
        fn partners_monotone(vals in prop::collection::vec(-1.0f64..1.0, 10), a1 in 0.0f64..1.0, a2 in 0.0f64..1.0, i in 0usize..5) {
            let mut v = Array2::<f64>::eye(5);
            let mut k = 0;
            for p in 0..5 { for q in (p + 1)..5 { v[[p, q]] = vals[k]; v[[q, p]] = vals[k]; k += 1; } }
            let r = CorrelationMatrix::from_values(v, names(5)).unwrap();
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            let wide = partners_above_threshold(&r, i, lo);
            let narrow = partners_above_threshold(&r, i, hi);
            prop_assert!(narrow.contains(&i));
            prop_assert!(narrow.iter().all(|j| wide.contains(j)));
        }

        #[test]
        fn matrix_invariants(vals in prop::collection::vec(-5.0f64..5.0, 8 * 4)) {
            let x = Array2::from_shape_vec((8, 4), vals).unwrap();
            let r = pearson_matrix(&x, &names(4)).unwrap();
            let diag = Array1::from_iter((0..4).map(|i| r.get(i, i)));
            prop_assert!(diag.iter().all(|d| (d - 1.0).abs() <= 1e-12));
            for i in 0..4 {
                for j in 0..4 {
                    prop_assert!((r.get(i, j) - r.get(j, i)).abs() <= 1e-12);
                    prop_assert!(r.get(i, j).abs() <= 1.0 + 1e-12);
                }
            }
        }
    }
}
