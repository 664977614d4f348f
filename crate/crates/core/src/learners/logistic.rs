use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::{sigmoid, softplus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    /// Coefficient of `0.5 * ||w||^2`; the intercept is not penalized.
    pub l2_strength: f64,
    pub max_iterations: usize,
    /// Initial step of each backtracking line search.
    pub step_size: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            l2_strength: 0.1,
            max_iterations: 500,
            step_size: 1.0,
        }
    }
}

impl LogisticParams {
    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.l2_strength >= 0.0 && self.l2_strength.is_finite()) {
            return Err(Error::InvalidConfig(format!("l2_strength {} must be >= 0", self.l2_strength)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be positive".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig(format!("step_size {} must be > 0", self.step_size)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LogisticModel {
    pub(crate) fn zeros(m: usize) -> Self {
        Self {
            weights: vec![0.0; m],
            intercept: 0.0,
        }
    }

    pub(crate) fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        let z: f64 = self.intercept + row.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>();
        sigmoid(z)
    }
}

struct Objective<'a> {
    x: &'a Array2<f64>,
    y: Array1<f64>,
    l2: f64,
}

impl Objective<'_> {
    fn value(&self, w: &Array1<f64>, b: f64) -> f64 {
        let z = self.x.dot(w) + b;
        let data: f64 = z
            .iter()
            .zip(&self.y)
            .map(|(&zi, &yi)| softplus(zi) - yi * zi)
            .sum::<f64>()
            / self.y.len() as f64;
        data + 0.5 * self.l2 * w.dot(w)
    }

    fn gradient(&self, w: &Array1<f64>, b: f64) -> (Array1<f64>, f64) {
        let n = self.y.len() as f64;
        let z = self.x.dot(w) + b;
        let resid: Array1<f64> = z.iter().zip(&self.y).map(|(&zi, &yi)| sigmoid(zi) - yi).collect();
        let gw = self.x.t().dot(&resid) / n + self.l2 * w;
        (gw, resid.sum() / n)
    }
}

/// Gradient descent with Armijo backtracking, starting from all zeros.
pub(crate) fn fit(params: &LogisticParams, x: &Array2<f64>, y: &[u8]) -> Result<LogisticModel> {
    let obj = Objective {
        x,
        y: y.iter().map(|&v| f64::from(v)).collect(),
        l2: params.l2_strength,
    };
    let mut w = Array1::<f64>::zeros(x.ncols());
    let mut b = 0.0;
    let mut f = obj.value(&w, b);
    for _ in 0..params.max_iterations {
        let (gw, gb) = obj.gradient(&w, b);
        let g2 = gw.dot(&gw) + gb * gb;
        if g2.sqrt() < 1e-10 {
            break;
        }
        let mut step = params.step_size;
        let mut accepted = false;
        for _ in 0..60 {
            let w_new = &w - &(&gw * step);
            let b_new = b - step * gb;
            let f_new = obj.value(&w_new, b_new);
            if f_new <= f - 0.5 * step * g2 {
                w = w_new;
                b = b_new;
                f = f_new;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !f.is_finite() {
        return Err(Error::Numerical("logistic objective diverged".into()));
    }
    Ok(LogisticModel {
        weights: w.to_vec(),
        intercept: b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn recovers_sign_of_informative_weight() {
        let x = array![[-2.0, 0.3], [-1.0, -0.2], [-0.5, 0.1], [0.5, 0.1], [1.0, -0.3], [2.0, 0.2]];
        let y = [0, 0, 1, 0, 1, 1];
        let m = fit(&LogisticParams::default(), &x, &y).unwrap();
        assert!(m.weights[0] > 0.5);
        assert!(m.weights[0].abs() > 3.0 * m.weights[1].abs());
    }

    #[test]
    fn stationary_point_reached() {
        let x = array![[0.0], [1.0], [2.0], [3.0], [1.5]];
        let y = [0, 0, 1, 1, 0];
        let p = LogisticParams {
            max_iterations: 5000,
            ..LogisticParams::default()
        };
        let m = fit(&p, &x, &y).unwrap();
        let obj = Objective {
            x: &x,
            y: y.iter().map(|&v| f64::from(v)).collect(),
            l2: p.l2_strength,
        };
        let (gw, gb) = obj.gradient(&Array1::from(m.weights.clone()), m.intercept);
        assert!(gw[0].abs() < 1e-6 && gb.abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(LogisticParams { step_size: 0.0, ..Default::default() }.validate().is_err());
        assert!(LogisticParams { l2_strength: -1.0, ..Default::default() }.validate().is_err());
        assert!(LogisticParams { max_iterations: 0, ..Default::default() }.validate().is_err());
    }
}
