//! Random forest of class-weighted Gini trees.
//!
//! Class weights are `n / (2 * n_c)`, inversely proportional to class
//! frequency in the training set. Each tree sees a bootstrap resample of the
//! training rows, tries `ceil(sqrt(F))` non-constant features per split and
//! is grown until its leaves are pure or no split separates the remaining
//! rows. Leaves store the class-weighted TCFA fraction.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::image::{class_counts, Class};
use crate::math;
use crate::rng;

/// Forest sizes compared by the feature sweep.
pub const TREE_GRID: [usize; 3] = [10, 50, 100];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { p_tcfa: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Nodes in creation order; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn leaf(p_tcfa: f64) -> Self {
        Self { nodes: vec![Node::Leaf { p_tcfa }] }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { p_tcfa } => return p_tcfa,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfModel {
    n_features: usize,
    /// Weight of (normal, tcfa) rows.
    pub class_weights: [f64; 2],
    pub trees: Vec<DecisionTree>,
}

/// `n / (2 * n_c)` for each class.
pub fn balanced_class_weights(classes: &[Class]) -> Result<[f64; 2]> {
    let (normal, tcfa) = class_counts(classes);
    if normal == 0 || tcfa == 0 {
        return Err(Error::SingleClass(format!("random forest needs both classes, got {normal}/{tcfa}")));
    }
    let n = (normal + tcfa) as f64;
    Ok([n / (2.0 * normal as f64), n / (2.0 * tcfa as f64)])
}

/// Training rows viewed column-friendly for split search.
struct Rows<'a> {
    x: &'a [f64],
    dim: usize,
    weight: Vec<f64>,
    positive: Vec<bool>,
}

impl Rows<'_> {
    fn value(&self, row: usize, feature: usize) -> f64 {
        self.x[row * self.dim + feature]
    }

    fn totals(&self, rows: &[usize]) -> [f64; 2] {
        rows.iter().fold([0.0, 0.0], |mut acc, &r| {
            acc[usize::from(self.positive[r])] += self.weight[r];
            acc
        })
    }
}

/// Gini purity score `sum_c w_c^2 / W` of one side; higher is purer.
fn purity(w: [f64; 2]) -> f64 {
    let total = w[0] + w[1];
    if total > 0.0 {
        (w[0] * w[0] + w[1] * w[1]) / total
    } else {
        0.0
    }
}

struct SplitCandidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

/// Best threshold on one feature; `None` when the feature is constant on `rows`.
fn best_threshold(data: &Rows, rows: &mut [usize], feature: usize, total: [f64; 2]) -> Option<SplitCandidate> {
    rows.sort_by(|&a, &b| data.value(a, feature).total_cmp(&data.value(b, feature)).then(a.cmp(&b)));
    let mut left = [0.0, 0.0];
    let mut best: Option<SplitCandidate> = None;
    for i in 0..rows.len() - 1 {
        let r = rows[i];
        left[usize::from(data.positive[r])] += data.weight[r];
        let (lo, hi) = (data.value(r, feature), data.value(rows[i + 1], feature));
        if lo == hi {
            continue;
        }
        let right = [total[0] - left[0], total[1] - left[1]];
        let score = purity(left) + purity(right);
        if best.as_ref().is_none_or(|b| score > b.score) {
            let mid = lo + (hi - lo) / 2.0;
            let threshold = if mid < hi { mid } else { lo };
            best = Some(SplitCandidate { feature, threshold, score });
        }
    }
    best
}

fn grow_tree(data: &Rows, sample: Vec<usize>, per_split: usize, rng: &mut rng::SeededRng) -> DecisionTree {
    let mut nodes = vec![Node::Leaf { p_tcfa: 0.0 }];
    let mut stack = vec![(0usize, sample)];
    let mut features: Vec<usize> = (0..data.dim).collect();
    while let Some((slot, mut rows)) = stack.pop() {
        let total = data.totals(&rows);
        let p_tcfa = total[1] / (total[0] + total[1]);
        if total[0] == 0.0 || total[1] == 0.0 || rows.len() < 2 {
            nodes[slot] = Node::Leaf { p_tcfa };
            continue;
        }
        features.shuffle(rng);
        let mut best: Option<SplitCandidate> = None;
        let mut tried = 0;
        for &f in features.iter() {
            if tried == per_split {
                break;
            }
            if let Some(c) = best_threshold(data, &mut rows, f, total) {
                tried += 1;
                if best.as_ref().is_none_or(|b| c.score > b.score) {
                    best = Some(c);
                }
            }
        }
        let Some(split) = best else {
            nodes[slot] = Node::Leaf { p_tcfa };
            continue;
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&r| data.value(r, split.feature) <= split.threshold);
        let (li, ri) = (nodes.len(), nodes.len() + 1);
        nodes.push(Node::Leaf { p_tcfa: 0.0 });
        nodes.push(Node::Leaf { p_tcfa: 0.0 });
        nodes[slot] = Node::Split { feature: split.feature, threshold: split.threshold, left: li, right: ri };
        stack.push((ri, right));
        stack.push((li, left));
    }
    DecisionTree { nodes }
}

/// Features tried per split: `ceil(sqrt(F))`.
pub fn features_per_split(n_features: usize) -> usize {
    (math::ceil(math::sqrt(n_features as f64)) as usize).clamp(1, n_features.max(1))
}

/// Fits one tree on a bootstrap resample drawn from `seed`.
pub fn fit_tree(x: &[f64], classes: &[Class], dim: usize, class_weights: [f64; 2], seed: u64) -> DecisionTree {
    let n = classes.len();
    let data = Rows {
        x,
        dim,
        weight: classes.iter().map(|c| class_weights[usize::from(c.bit())]).collect(),
        positive: classes.iter().map(|c| c.is_positive()).collect(),
    };
    let mut rng = rng::seeded(seed);
    let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    grow_tree(&data, sample, features_per_split(dim), &mut rng)
}

pub fn rf_train(train: &FeatureMatrix, trees: usize, seed: u64) -> Result<RfModel> {
    if train.len() < 2 {
        return Err(Error::InvalidArgument(format!("random forest needs at least 2 rows, got {}", train.len())));
    }
    if trees == 0 {
        return Err(Error::InvalidArgument("random forest needs at least one tree".into()));
    }
    let classes = train.classes();
    let class_weights = balanced_class_weights(&classes)?;
    let dim = train.n_features();
    let (x, _) = super::fnn::flatten(train);
    let fit = |t: usize| fit_tree(&x, &classes, dim, class_weights, rng::derive_indexed(seed, t as u64));

    #[cfg(feature = "parallel")]
    let forest: Vec<DecisionTree> = {
        use rayon::prelude::*;
        (0..trees).into_par_iter().map(fit).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let forest: Vec<DecisionTree> = (0..trees).map(fit).collect();

    Ok(RfModel { n_features: dim, class_weights, trees: forest })
}

impl RfModel {
    pub fn from_trees(n_features: usize, class_weights: [f64; 2], trees: Vec<DecisionTree>) -> Self {
        Self { n_features, class_weights, trees }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Mean leaf TCFA probability over the trees.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch(format!("forest expects {} features, got {}", self.n_features, x.len())));
        }
        if self.trees.is_empty() {
            return Err(Error::Empty("forest has no trees".into()));
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_inverse_to_frequency() {
        let mut classes = vec![Class::Normal; 90];
        classes.extend(vec![Class::Tcfa; 10]);
        let w = balanced_class_weights(&classes).unwrap();
        assert!((w[0] * 90.0 - w[1] * 10.0).abs() < 1e-12);
        assert!((w[1] / w[0] - 9.0).abs() < 1e-12);
        assert!(balanced_class_weights(&[Class::Tcfa]).is_err());
    }

    #[test]
    fn pure_sample_gives_depth_zero_tree() {
        let x = [0.1, 0.2, 0.3, 0.4];
        let classes = [Class::Tcfa; 4];
        let tree = fit_tree(&x, &classes, 1, [1.0, 1.0], 3);
        assert_eq!(tree.depth(), 0);
        assert_eq!(tree, DecisionTree::leaf(1.0));
    }

    #[test]
    fn averaging_votes() {
        let mut trees = vec![DecisionTree::leaf(1.0); 6];
        trees.extend(vec![DecisionTree::leaf(0.0); 4]);
        let forest = RfModel::from_trees(2, [1.0, 1.0], trees.clone());
        assert!((forest.predict_proba(&[0.0, 0.0]).unwrap() - 0.6).abs() < 1e-15);
        trees.reverse();
        let reversed = RfModel::from_trees(2, [1.0, 1.0], trees);
        assert!((reversed.predict_proba(&[0.0, 0.0]).unwrap() - 0.6).abs() < 1e-15);
        let all = RfModel::from_trees(2, [1.0, 1.0], vec![DecisionTree::leaf(1.0); 3]);
        assert_eq!(all.predict_proba(&[5.0, 5.0]).unwrap(), 1.0);
        assert!(matches!(all.predict_proba(&[5.0]), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn split_sizes() {
        assert_eq!(features_per_split(105), 11);
        assert_eq!(features_per_split(100), 10);
        assert_eq!(features_per_split(1), 1);
        assert_eq!(features_per_split(2), 2);
    }

    #[test]
    fn leaves_are_pure_on_distinct_rows() {
        // XOR-like layout still separates with zero-gain first splits
        let x = [0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0];
        let classes = [Class::Normal, Class::Tcfa, Class::Tcfa, Class::Normal];
        let data = Rows {
            x: &x,
            dim: 2,
            weight: vec![1.0; 4],
            positive: classes.iter().map(|c| c.is_positive()).collect(),
        };
        let tree = grow_tree(&data, vec![0, 1, 2, 3], 2, &mut rng::seeded(1));
        for (i, c) in classes.iter().enumerate() {
            assert_eq!(tree.predict(&x[i * 2..i * 2 + 2]), f64::from(c.bit()));
        }
    }
}
