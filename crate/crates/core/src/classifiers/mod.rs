//! Feature-based classifiers. Each produces a TCFA probability per row.

pub mod fnn;
pub mod knn;
pub mod rf;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::features::FeatureMatrix;

pub use fnn::{fnn_train, FnnConfig, FnnModel};
pub use knn::{KnnModel, Weighting};
pub use rf::{rf_train, RfModel};

/// Which feature classifier to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassifierKind {
    Fnn,
    Knn,
    Rf,
}

impl ClassifierKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Fnn => "fnn",
            ClassifierKind::Knn => "knn",
            ClassifierKind::Rf => "rf",
        }
    }
}

/// Any trained feature classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "lowercase")]
pub enum TrainedModel {
    Fnn(FnnModel),
    Knn(KnnModel),
    Rf(RfModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            TrainedModel::Fnn(_) => ClassifierKind::Fnn,
            TrainedModel::Knn(_) => ClassifierKind::Knn,
            TrainedModel::Rf(_) => ClassifierKind::Rf,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            TrainedModel::Fnn(m) => m.n_features(),
            TrainedModel::Knn(m) => m.n_features(),
            TrainedModel::Rf(m) => m.n_features(),
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        match self {
            TrainedModel::Fnn(m) => m.predict_proba(x),
            TrainedModel::Knn(m) => m.predict_proba(x),
            TrainedModel::Rf(m) => m.predict_proba(x),
        }
    }

    /// Scores for every row of `m`, in row order.
    pub fn score_matrix(&self, m: &FeatureMatrix) -> Result<Vec<f64>> {
        m.rows().iter().map(|r| self.predict_proba(&r.values)).collect()
    }
}
