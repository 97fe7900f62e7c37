//! Chi-square feature scoring and top-N selection.
//!
//! Continuous features are scored in the sum-as-frequency form: for feature
//! `f`, the observed count for class `c` is the sum of `f` over the rows of
//! class `c`, the expected count is the column total scaled by the class
//! share, and the score is `sum_c (observed - expected)^2 / expected`.
//! Classes with zero expected count contribute nothing.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::image::class_counts;

pub fn chi2_scores(m: &FeatureMatrix) -> Result<Vec<f64>> {
    let (normal, tcfa) = class_counts(m.rows().iter().map(|r| &r.class));
    if normal == 0 || tcfa == 0 {
        return Err(Error::SingleClass(format!("chi-square needs both classes, got {normal}/{tcfa}")));
    }
    let n = (normal + tcfa) as f64;
    let share = [normal as f64 / n, tcfa as f64 / n];

    let width = m.n_features();
    let mut observed = vec![[0.0f64; 2]; width];
    for row in m.rows() {
        let c = usize::from(row.class.bit());
        for (j, &x) in row.values.iter().enumerate() {
            if x < 0.0 {
                return Err(Error::NegativeFeature { column: j, value: x });
            }
            observed[j][c] += x;
        }
    }

    Ok(observed
        .iter()
        .map(|obs| {
            let total = obs[0] + obs[1];
            (0..2)
                .map(|c| {
                    let expected = total * share[c];
                    if expected > 0.0 {
                        let d = obs[c] - expected;
                        d * d / expected
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect())
}

/// One ranked feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    /// 1-based feature id (F-number).
    pub feature: usize,
    /// Column position in the matrix the ranking was computed on.
    pub column: usize,
    pub score: f64,
    /// Share of the total score, in percent.
    pub share_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub entries: Vec<RankedFeature>,
    /// Set when every score is zero; all shares are then 0.
    pub all_zero: bool,
}

impl FeatureRanking {
    /// Column positions of the best `n` features.
    pub fn top_columns(&self, n: usize) -> Vec<usize> {
        self.entries.iter().take(n).map(|e| e.column).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Descending by score, ties to the lower feature position.
pub fn rank_features(m: &FeatureMatrix) -> Result<FeatureRanking> {
    Ok(rank_scores(&chi2_scores(m)?, m.feature_ids()))
}

pub fn rank_scores(scores: &[f64], feature_ids: &[usize]) -> FeatureRanking {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let total: f64 = scores.iter().sum();
    let all_zero = total <= 0.0;
    let entries = order
        .into_iter()
        .map(|j| RankedFeature {
            feature: feature_ids[j],
            column: j,
            score: scores[j],
            share_pct: if all_zero { 0.0 } else { scores[j] / total * 100.0 },
        })
        .collect();
    FeatureRanking { entries, all_zero }
}

/// Keeps the `n` best-ranked columns, row order and labels preserved.
pub fn select_top_n(ranking: &FeatureRanking, m: &FeatureMatrix, n: usize) -> Result<FeatureMatrix> {
    if n == 0 || n > m.n_features() || n > ranking.len() {
        return Err(Error::InvalidArgument(format!(
            "top-N must be in 1..={}, got {n}",
            m.n_features().min(ranking.len())
        )));
    }
    m.select_columns(&ranking.top_columns(n))
}
