//! K-nearest-neighbour scoring under the Euclidean metric.

use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval;
use crate::features::FeatureMatrix;
use crate::image::Class;
use crate::math;

/// Candidate neighbourhood sizes.
pub const K_GRID: [usize; 5] = [1, 3, 5, 7, 9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Weighting {
    Uniform,
    /// Weight `1 / d` per neighbour.
    Distance,
}

impl Weighting {
    pub const ALL: [Weighting; 2] = [Weighting::Uniform, Weighting::Distance];

    pub fn name(self) -> &'static str {
        match self {
            Weighting::Uniform => "uniform",
            Weighting::Distance => "distance",
        }
    }
}

pub fn euclidean(p: &[f64], q: &[f64]) -> f64 {
    math::sqrt(p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub weighting: Weighting,
    n_features: usize,
    points: Vec<f64>,
    labels: Vec<Class>,
}

impl KnnModel {
    pub fn fit(train: &FeatureMatrix, k: usize, weighting: Weighting) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("KNN needs at least one training row".into()));
        }
        if train.n_features() == 0 {
            return Err(Error::Empty("KNN needs at least one feature".into()));
        }
        if k == 0 || k.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("K must be odd, got {k}")));
        }
        if k > train.len() {
            return Err(Error::InvalidArgument(format!("K = {k} exceeds {} training rows", train.len())));
        }
        let (points, labels) = super::fnn::flatten(train);
        Ok(Self { k, weighting, n_features: train.n_features(), points, labels })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(distance, training row)` of the K nearest rows; ties at equal
    /// distance go to the lower row index.
    pub fn neighbours(&self, x: &[f64]) -> Result<Vec<(f64, usize)>> {
        if self.is_empty() {
            return Err(Error::Empty("KNN model holds no training rows".into()));
        }
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch(format!("KNN expects {} features, got {}", self.n_features, x.len())));
        }
        let mut d: Vec<(f64, usize)> = self
            .points
            .chunks(self.n_features)
            .enumerate()
            .map(|(i, p)| (euclidean(p, x), i))
            .collect();
        let by_distance = |a: &(f64, usize), b: &(f64, usize)| -> Ordering { a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)) };
        let k = self.k.min(d.len());
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, by_distance);
            d.truncate(k);
        }
        d.sort_by(by_distance);
        Ok(d)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        let nn = self.neighbours(x)?;
        let label = |i: usize| f64::from(self.labels[i].bit());
        Ok(match self.weighting {
            Weighting::Uniform => nn.iter().map(|&(_, i)| label(i)).sum::<f64>() / nn.len() as f64,
            Weighting::Distance => {
                let exact: Vec<usize> = nn.iter().filter(|(d, _)| *d == 0.0).map(|&(_, i)| i).collect();
                if !exact.is_empty() {
                    exact.iter().map(|&i| label(i)).sum::<f64>() / exact.len() as f64
                } else {
                    let (num, den) = nn.iter().fold((0.0, 0.0), |(n, s), &(d, i)| (n + label(i) / d, s + 1.0 / d));
                    num / den
                }
            }
        })
    }
}

/// Outcome of choosing K and the weighting on a validation split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnChoice {
    pub k: usize,
    pub weighting: Weighting,
    pub validation_auc: f64,
}

/// Picks the (weighting, K) with the best validation AUC; earlier grid
/// entries (uniform before distance, smaller K first) win ties. K values
/// larger than the training set are skipped.
pub fn choose_k(train: &FeatureMatrix, validation: &FeatureMatrix) -> Result<KnnChoice> {
    let labels = validation.classes();
    let mut best: Option<KnnChoice> = None;
    for weighting in Weighting::ALL {
        for k in K_GRID.into_iter().filter(|&k| k <= train.len()) {
            let model = KnnModel::fit(train, k, weighting)?;
            let scores = validation.rows().iter().map(|r| model.predict_proba(&r.values)).collect::<Result<Vec<_>>>()?;
            let auc = eval::auc(&scores, &labels)?;
            if best.is_none_or(|b| auc > b.validation_auc) {
                best = Some(KnnChoice { k, weighting, validation_auc: auc });
            }
        }
    }
    best.ok_or_else(|| Error::Empty("no K fits the training set".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureRow;
    use alloc::string::ToString;
    use alloc::vec;

    fn matrix(points: &[(&[f64], u8)]) -> FeatureMatrix {
        FeatureMatrix::new(
            (1..=points[0].0.len()).collect(),
            points
                .iter()
                .enumerate()
                .map(|(i, (v, c))| FeatureRow {
                    id: i.to_string(),
                    class: Class::from_bit(*c).unwrap(),
                    values: v.to_vec(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn three_four_five() {
        assert_eq!(euclidean(&[0.0, 0.0], &[3.0, 4.0]), 5.0);
    }

    #[test]
    fn uniform_vote_fraction() {
        let m = matrix(&[(&[1.0], 1), (&[2.0], 1), (&[3.0], 0), (&[10.0], 0)]);
        let knn = KnnModel::fit(&m, 3, Weighting::Uniform).unwrap();
        assert!((knn.predict_proba(&[0.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn distance_weighting_and_exact_match() {
        // neighbours at distances 1 (tcfa), 2 (tcfa), 4 (normal)
        let m = matrix(&[(&[1.0], 1), (&[2.0], 1), (&[4.0], 0), (&[50.0], 0)]);
        let knn = KnnModel::fit(&m, 3, Weighting::Distance).unwrap();
        let expected = (1.0 + 0.5) / (1.0 + 0.5 + 0.25);
        assert!((knn.predict_proba(&[0.0]).unwrap() - expected).abs() < 1e-15);
        // exactly on a normal point: the zero-distance rule wins
        assert_eq!(knn.predict_proba(&[4.0]).unwrap(), 0.0);
        let one = KnnModel::fit(&m, 1, Weighting::Uniform).unwrap();
        assert_eq!(one.predict_proba(&[2.0]).unwrap(), 1.0);
    }

    #[test]
    fn ties_at_kth_distance_prefer_lower_rows() {
        let m = matrix(&[(&[1.0], 0), (&[-1.0], 1), (&[1.0], 1)]);
        let knn = KnnModel::fit(&m, 1, Weighting::Uniform).unwrap();
        assert_eq!(knn.neighbours(&[0.0]).unwrap(), vec![(1.0, 0)]);
        assert_eq!(knn.predict_proba(&[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn fit_errors() {
        let m = matrix(&[(&[1.0], 0), (&[2.0], 1)]);
        assert!(KnnModel::fit(&m, 2, Weighting::Uniform).is_err());
        assert!(KnnModel::fit(&m, 3, Weighting::Uniform).is_err());
        let empty = m.subset_rows(&[]);
        assert!(matches!(KnnModel::fit(&empty, 1, Weighting::Uniform), Err(Error::Empty(_))));
    }

    #[test]
    fn choose_k_prefers_perfect_validation() {
        let train = matrix(&[(&[0.0], 0), (&[0.1], 0), (&[0.2], 0), (&[1.0], 1), (&[1.1], 1), (&[1.2], 1)]);
        let val = matrix(&[(&[0.05], 0), (&[1.05], 1)]);
        let c = choose_k(&train, &val).unwrap();
        assert_eq!((c.k, c.weighting, c.validation_auc), (1, Weighting::Uniform, 1.0));
    }
}
