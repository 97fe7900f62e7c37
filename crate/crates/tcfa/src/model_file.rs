//! Versioned JSON model files. Floats are written with full round-trip
//! precision, so a reloaded model scores bit-identically.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tcfa_core::classifiers::TrainedModel;
use tcfa_core::cnn::{CnnModel, ImageSet};
use tcfa_core::eval::SplitSpec;
use tcfa_core::features::{FeatureMatrix, NormalizationParams};

use crate::error::{FormatError, FormatResult};

pub const FORMAT_NAME: &str = "tcfa-model";
pub const FORMAT_VERSION: u32 = 1;

/// A trained predictor together with everything needed to apply it to raw
/// inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "input", rename_all = "lowercase")]
pub enum Predictor {
    /// Scores raw 105-feature rows: picks `features` (1-based ids, in model
    /// column order), min-max normalizes them with `normalizer`, then
    /// applies `model`.
    Features { features: Vec<usize>, normalizer: NormalizationParams, model: TrainedModel },
    /// Scores greyscale frames. `split` records the train/test split the
    /// network was trained under, if any.
    Image { split: Option<SplitSpec>, model: CnnModel },
}

impl Predictor {
    pub fn classifier_name(&self) -> &'static str {
        match self {
            Predictor::Features { model, .. } => model.kind().name(),
            Predictor::Image { .. } => "cnn",
        }
    }

    /// TCFA scores for the rows of `m`, which must contain every feature
    /// the model uses (in any column order).
    pub fn score_features(&self, m: &FeatureMatrix) -> Result<Vec<f64>, String> {
        let Predictor::Features { features, normalizer, model } = self else {
            return Err("an image model cannot score feature rows".into());
        };
        let positions = features
            .iter()
            .map(|f| m.feature_ids().iter().position(|g| g == f).ok_or_else(|| format!("input has no column F{f}")))
            .collect::<Result<Vec<_>, _>>()?;
        m.rows()
            .iter()
            .map(|r| {
                let picked: Vec<f64> = positions.iter().map(|&p| r.values[p]).collect();
                let x = normalizer.normalize(&picked).map_err(|e| e.to_string())?;
                model.predict_proba(&x).map_err(|e| e.to_string())
            })
            .collect()
    }

    pub fn score_images(&self, set: &ImageSet) -> Result<Vec<f64>, String> {
        match self {
            Predictor::Image { model, .. } => model.score_set(set).map_err(|e| e.to_string()),
            Predictor::Features { .. } => Err("a feature model cannot score images".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    predictor: Predictor,
}

pub fn save_model(path: &Path, predictor: &Predictor) -> FormatResult<()> {
    let file = ModelFile { format: FORMAT_NAME.into(), version: FORMAT_VERSION, predictor: predictor.clone() };
    let bytes = serde_json::to_vec(&file).map_err(|e| FormatError::parse(path, e.to_string()))?;
    fs::write(path, bytes).map_err(|e| FormatError::io(path, e))
}

pub fn load_model(path: &Path) -> FormatResult<Predictor> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    let header: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| FormatError::parse(path, e.to_string()))?;
    if header.get("format").and_then(|f| f.as_str()) != Some(FORMAT_NAME) {
        return Err(FormatError::parse(path, "not a tcfa model file"));
    }
    match header.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(FORMAT_VERSION) => {}
        other => return Err(FormatError::parse(path, format!("unsupported model file version {other:?}"))),
    }
    let file: ModelFile = serde_json::from_value(header).map_err(|e| FormatError::parse(path, e.to_string()))?;
    Ok(file.predictor)
}
