//! AUC as a function of the number of top-ranked features.
//!
//! The normalizer and the chi-square ranking are fit on the training rows
//! only. For every N the classifier is refit on the N best columns and
//! scored on the held-out rows. Each N gets its own seed derived from the
//! experiment seed, so the series is the same whether the N values run in
//! sequence or in parallel.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::classifiers::knn::{self, KnnChoice, KnnModel};
use crate::classifiers::{fnn_train, rf_train, FnnConfig, TrainedModel};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, SplitSpec};
use crate::features::{apply_normalizer, fit_normalizer, FeatureMatrix, NormalizationParams, FEATURE_COUNT};
use crate::rng;
use crate::selection::{rank_features, select_top_n, FeatureRanking};

/// Share of the training rows set aside to choose K for KNN.
pub const KNN_VALIDATION_FRACTION: f64 = 0.1;

/// A feature classifier together with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassifierSpec {
    Fnn(FnnConfig),
    /// K and the weighting are chosen on a stratified validation carve-out.
    Knn,
    Rf { trees: usize },
}

impl ClassifierSpec {
    /// `fnn`, `knn` or `rf-<trees>`.
    pub fn label(&self) -> String {
        match self {
            ClassifierSpec::Fnn(_) => "fnn".into(),
            ClassifierSpec::Knn => "knn".into(),
            ClassifierSpec::Rf { trees } => format!("rf-{trees}"),
        }
    }
}

/// Fits `spec` on `train`. For KNN the chosen neighbourhood is returned too.
pub fn fit_classifier(spec: &ClassifierSpec, train: &FeatureMatrix, seed: u64) -> Result<(TrainedModel, Option<KnnChoice>)> {
    match spec {
        ClassifierSpec::Fnn(cfg) => Ok((TrainedModel::Fnn(fnn_train(train, cfg, seed)?), None)),
        ClassifierSpec::Rf { trees } => Ok((TrainedModel::Rf(rf_train(train, *trees, seed)?), None)),
        ClassifierSpec::Knn => {
            let split = SplitSpec::new(1.0 - KNN_VALIDATION_FRACTION, rng::derive_seed(seed, "knn/validation"))?;
            let (inner, val) = eval::stratified_split(&train.classes(), &split)?;
            let validation = train.subset_rows(&val);
            let choice = if validation.classes().iter().any(|c| c.is_positive())
                && validation.classes().iter().any(|c| !c.is_positive())
            {
                knn::choose_k(&train.subset_rows(&inner), &validation)?
            } else {
                // too few rows to hold out both classes: fall back to the first grid entry
                KnnChoice { k: 1, weighting: knn::Weighting::Uniform, validation_auc: f64::NAN }
            };
            let model = KnnModel::fit(train, choice.k, choice.weighting)?;
            Ok((TrainedModel::Knn(model), Some(choice)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    pub auc: f64,
}

/// Best point of a series with its full evaluation at the optimal cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepBest {
    pub n: usize,
    pub report: EvalReport,
    pub knn: Option<KnnChoice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSeries {
    pub label: String,
    pub points: Vec<SweepPoint>,
    pub best: SweepBest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub normalizer: NormalizationParams,
    pub ranking: FeatureRanking,
    pub series: Vec<SweepSeries>,
}

/// Every N from 1 to 105.
pub fn full_grid() -> Vec<usize> {
    (1..=FEATURE_COUNT).collect()
}

/// Normalizes both sides with train-fit parameters and ranks on the
/// normalized training rows.
pub fn prepare(train: &FeatureMatrix, test: &FeatureMatrix) -> Result<(NormalizationParams, FeatureRanking, FeatureMatrix, FeatureMatrix)> {
    let normalizer = fit_normalizer(train)?;
    let train_n = apply_normalizer(&normalizer, train)?;
    let test_n = apply_normalizer(&normalizer, test)?;
    let ranking = rank_features(&train_n)?;
    Ok((normalizer, ranking, train_n, test_n))
}

/// Seed of one sweep point: the series seed is derived from the experiment
/// seed and the classifier label, the point seed from the series seed and N.
pub fn point_seed(seed: u64, spec: &ClassifierSpec, n: usize) -> u64 {
    rng::derive_indexed(rng::derive_seed(seed, &format!("sweep/{}", spec.label())), n as u64)
}

struct Evaluated {
    n: usize,
    scores: Vec<f64>,
    auc: f64,
    knn: Option<KnnChoice>,
}

fn evaluate_n(
    spec: &ClassifierSpec,
    ranking: &FeatureRanking,
    train: &FeatureMatrix,
    test: &FeatureMatrix,
    n: usize,
    seed: u64,
) -> Result<Evaluated> {
    let tr = select_top_n(ranking, train, n)?;
    let te = select_top_n(ranking, test, n)?;
    let (model, knn) = fit_classifier(spec, &tr, point_seed(seed, spec, n))?;
    let scores = model.score_matrix(&te)?;
    let auc = eval::auc(&scores, &te.classes())?;
    Ok(Evaluated { n, scores, auc, knn })
}

/// One series per classifier spec over the given N values. The best point
/// is the highest AUC, ties going to the smaller N.
pub fn feature_sweep(
    train: &FeatureMatrix,
    test: &FeatureMatrix,
    specs: &[ClassifierSpec],
    ns: &[usize],
    seed: u64,
) -> Result<SweepResult> {
    if ns.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one N".into()));
    }
    let (normalizer, ranking, train_n, test_n) = prepare(train, test)?;
    let labels = test_n.classes();
    let mut series = Vec::with_capacity(specs.len());
    for spec in specs {
        let label = spec.label();
        let run = |&n: &usize| evaluate_n(spec, &ranking, &train_n, &test_n, n, seed);

        #[cfg(feature = "parallel")]
        let evaluated: Vec<Evaluated> = {
            use rayon::prelude::*;
            ns.par_iter().map(run).collect::<Result<_>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let evaluated: Vec<Evaluated> = ns.iter().map(run).collect::<Result<_>>()?;

        let mut best = &evaluated[0];
        for e in &evaluated[1..] {
            if e.auc > best.auc || (e.auc == best.auc && e.n < best.n) {
                best = e;
            }
        }
        let (report, _) = eval::evaluate(&best.scores, &labels)?;
        let best = SweepBest { n: best.n, report, knn: best.knn };
        let points = evaluated.iter().map(|e| SweepPoint { n: e.n, auc: e.auc }).collect();
        series.push(SweepSeries { label, points, best });
    }
    Ok(SweepResult { normalizer, ranking, series })
}

/// The sweep specs for a classifier family: FNN and KNN yield one series,
/// the forest one per tree count.
pub fn default_specs(kind: crate::classifiers::ClassifierKind, fnn: &FnnConfig) -> Vec<ClassifierSpec> {
    use crate::classifiers::{rf::TREE_GRID, ClassifierKind};
    match kind {
        ClassifierKind::Fnn => alloc::vec![ClassifierSpec::Fnn(fnn.clone())],
        ClassifierKind::Knn => alloc::vec![ClassifierSpec::Knn],
        ClassifierKind::Rf => TREE_GRID.iter().map(|&trees| ClassifierSpec::Rf { trees }).collect(),
    }
}
