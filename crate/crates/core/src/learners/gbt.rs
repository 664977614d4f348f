//! Gradient-boosted regression trees on the logistic loss.
//!
//! Each round fits a depth-limited tree to the first and second derivatives of
//! the loss at the current raw scores. Splits maximize the second-order gain
//! `G_L^2/(H_L+l) + G_R^2/(H_R+l) - G^2/(H+l)` and leaves take the Newton step
//! `-G/(H+l)`, shrunk by the learning rate. Trees grow level by level with an
//! exact scan over presorted feature columns.

use ndarray::{Array2, ArrayView1};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sigmoid;
use crate::error::{Error, Result};

/// L2 penalty on leaf weights.
const LEAF_L2: f64 = 1.0;
/// Splits must improve the gain by more than this.
const MIN_GAIN: f64 = 1e-12;
const NO_SLOT: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub subsample_fraction: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 5,
            subsample_fraction: 1.0,
        }
    }
}

impl GbtParams {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(Error::InvalidConfig("max_depth must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.learning_rate) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate {} not in [0, 1]",
                self.learning_rate
            )));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidConfig("min_samples_leaf must be at least 1".into()));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "subsample_fraction {} not in (0, 1]",
                self.subsample_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if row[feature] <= threshold { left } else { right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    /// Log-odds of the training base rate.
    pub base_score: f64,
    pub trees: Vec<Tree>,
}

impl GbtModel {
    pub(crate) fn raw_score(&self, row: ArrayView1<f64>) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub(crate) fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        sigmoid(self.raw_score(row))
    }
}

#[derive(Clone, Copy, Default)]
struct NodeStats {
    grad: f64,
    hess: f64,
    count: usize,
}

impl NodeStats {
    fn score(&self) -> f64 {
        self.grad * self.grad / (self.hess + LEAF_L2)
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Midpoint between two distinct sorted values, never equal to the upper one.
fn split_threshold(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid < hi {
        mid
    } else {
        lo
    }
}

struct TreeBuilder<'a> {
    x: &'a Array2<f64>,
    orders: &'a [Vec<usize>],
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a GbtParams,
}

impl TreeBuilder<'_> {
    /// `in_bag[i]` marks the rows used for this tree.
    fn build(&self, in_bag: &[bool]) -> Tree {
        let n = self.x.nrows();
        let mut nodes = vec![Node::Leaf { value: 0.0 }];
        let mut stats = vec![NodeStats::default()];
        let mut node_of: Vec<usize> = vec![NO_SLOT; n];
        for i in 0..n {
            if in_bag[i] {
                node_of[i] = 0;
                stats[0].grad += self.grad[i];
                stats[0].hess += self.hess[i];
                stats[0].count += 1;
            }
        }

        let min_leaf = self.params.min_samples_leaf;
        let mut active: Vec<usize> = vec![0];
        for _depth in 0..self.params.max_depth {
            active.retain(|&k| stats[k].count >= 2 * min_leaf);
            if active.is_empty() {
                break;
            }
            let mut slot_of = vec![NO_SLOT; nodes.len()];
            for (s, &k) in active.iter().enumerate() {
                slot_of[k] = s;
            }
            let best = self.best_splits(&active, &slot_of, &stats, &node_of);

            let mut next = Vec::new();
            let mut split_of = vec![None; nodes.len()];
            for (s, cand) in best.iter().enumerate() {
                let Some(c) = cand else { continue };
                let k = active[s];
                let left = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                nodes.push(Node::Leaf { value: 0.0 });
                stats.push(NodeStats::default());
                stats.push(NodeStats::default());
                nodes[k] = Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left,
                    right: left + 1,
                };
                split_of[k] = Some((c.feature, c.threshold, left));
                next.push(left);
                next.push(left + 1);
            }
            if next.is_empty() {
                break;
            }
            for i in 0..n {
                let k = node_of[i];
                if k == NO_SLOT {
                    continue;
                }
                if let Some((f, thr, left)) = split_of[k] {
                    let child = if self.x[[i, f]] <= thr { left } else { left + 1 };
                    node_of[i] = child;
                    let st = &mut stats[child];
                    st.grad += self.grad[i];
                    st.hess += self.hess[i];
                    st.count += 1;
                }
            }
            active = next;
        }

        let lr = self.params.learning_rate;
        for (node, st) in nodes.iter_mut().zip(&stats) {
            if let Node::Leaf { value } = node {
                *value = if st.count == 0 {
                    0.0
                } else {
                    -lr * st.grad / (st.hess + LEAF_L2)
                };
            }
        }
        Tree { nodes }
    }

    /// One scan per feature over the presorted rows evaluates every
    /// threshold of every active node at once. Features and thresholds are
    /// visited in ascending order and only a strictly larger gain replaces
    /// the incumbent, so ties go to the lower feature, then lower threshold.
    fn best_splits(
        &self,
        active: &[usize],
        slot_of: &[usize],
        stats: &[NodeStats],
        node_of: &[usize],
    ) -> Vec<Option<Candidate>> {
        let min_leaf = self.params.min_samples_leaf;
        let mut best: Vec<Option<Candidate>> = vec![None; active.len()];
        let mut left = vec![NodeStats::default(); active.len()];
        let mut last = vec![f64::NEG_INFINITY; active.len()];
        for (f, order) in self.orders.iter().enumerate() {
            left.fill(NodeStats::default());
            last.fill(f64::NEG_INFINITY);
            for &i in order {
                let k = node_of[i];
                if k == NO_SLOT || k >= slot_of.len() {
                    continue;
                }
                let s = slot_of[k];
                if s == NO_SLOT {
                    continue;
                }
                let v = self.x[[i, f]];
                let total = stats[k];
                let l = left[s];
                if l.count >= min_leaf && total.count - l.count >= min_leaf && v > last[s] {
                    let r = NodeStats {
                        grad: total.grad - l.grad,
                        hess: total.hess - l.hess,
                        count: total.count - l.count,
                    };
                    let gain = l.score() + r.score() - total.score();
                    let incumbent = best[s].map_or(MIN_GAIN, |c| c.gain);
                    if gain > incumbent {
                        best[s] = Some(Candidate {
                            gain,
                            feature: f,
                            threshold: split_threshold(last[s], v),
                        });
                    }
                }
                let l = &mut left[s];
                l.grad += self.grad[i];
                l.hess += self.hess[i];
                l.count += 1;
                last[s] = v;
            }
        }
        best
    }
}

pub(crate) fn fit(params: &GbtParams, x: &Array2<f64>, y: &[u8], seed: u64) -> Result<GbtModel> {
    let (n, m) = x.dim();
    let rate = y.iter().filter(|&&v| v == 1).count() as f64 / n as f64;
    let base_score = (rate / (1.0 - rate)).ln();
    let mut model = GbtModel {
        base_score,
        trees: Vec::with_capacity(params.n_trees),
    };
    if params.n_trees == 0 {
        return Ok(model);
    }

    let orders: Vec<Vec<usize>> = (0..m)
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bag_size = ((params.subsample_fraction * n as f64).round() as usize).clamp(1, n);
    let mut raw = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut in_bag = vec![true; n];

    for _ in 0..params.n_trees {
        for i in 0..n {
            let p = sigmoid(raw[i]);
            grad[i] = p - f64::from(y[i]);
            hess[i] = p * (1.0 - p);
        }
        if bag_size < n {
            in_bag.fill(false);
            for i in index::sample(&mut rng, n, bag_size) {
                in_bag[i] = true;
            }
        }
        let tree = TreeBuilder {
            x,
            orders: &orders,
            grad: &grad,
            hess: &hess,
            params,
        }
        .build(&in_bag);
        for (i, r) in raw.iter_mut().enumerate() {
            *r += tree.predict_row(x.row(i));
        }
        model.trees.push(tree);
    }
    if raw.iter().any(|r| !r.is_finite()) {
        return Err(Error::Numerical("boosting produced non-finite scores".into()));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn stump(x: &Array2<f64>, y: &[u8]) -> GbtModel {
        let params = GbtParams {
            n_trees: 1,
            max_depth: 1,
            learning_rate: 1.0,
            min_samples_leaf: 1,
            subsample_fraction: 1.0,
        };
        fit(&params, x, y, 0).unwrap()
    }

    #[test]
    fn stump_finds_clean_threshold() {
        let x = array![[1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0]];
        let m = stump(&x, &[0, 0, 1, 1]);
        match m.trees[0].nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 2.5);
            }
            ref n => panic!("expected split, got {n:?}"),
        }
    }

    #[test]
    fn leaf_values_are_newton_steps() {
        let x = array![[0.0], [0.0], [1.0], [1.0]];
        let m = stump(&x, &[0, 0, 1, 1]);
        // base rate 0.5: g = -0.5 for positives, h = 0.25
        let expect = 1.0 / (0.5 + LEAF_L2);
        let Node::Leaf { value } = m.trees[0].nodes[2] else { panic!() };
        assert!((value - expect).abs() < 1e-12);
    }

    #[test]
    fn ties_prefer_lower_feature() {
        // both columns separate the classes identically
        let x = array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]];
        let m = stump(&x, &[0, 0, 1, 1]);
        assert!(matches!(m.trees[0].nodes[0], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn respects_min_samples_leaf() {
        let x = array![[1.0], [2.0], [3.0], [4.0], [5.0], [6.0]];
        let params = GbtParams {
            n_trees: 1,
            max_depth: 4,
            learning_rate: 1.0,
            min_samples_leaf: 3,
            subsample_fraction: 1.0,
        };
        let m = fit(&params, &x, &[1, 0, 0, 0, 1, 1], 0).unwrap();
        // only the 3/3 split is admissible
        assert_eq!(m.trees[0].nodes.len(), 3);
    }

    #[test]
    fn constant_features_never_split() {
        let x = Array2::from_elem((10, 2), 3.0);
        let y: Vec<u8> = (0..10).map(|i| (i % 2) as u8).collect();
        let m = fit(&GbtParams::default(), &x, &y, 0).unwrap();
        assert!(m.trees.iter().all(|t| t.nodes.len() == 1));
    }

    #[test]
    fn threshold_between_adjacent_floats() {
        let lo = 1.0f64;
        let hi = f64::from_bits(lo.to_bits() + 1);
        let t = split_threshold(lo, hi);
        assert!(lo <= t && t < hi);
    }
}
