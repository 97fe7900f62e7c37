//! The 105 pixel-range features and min-max normalization.
//!
//! Layout (1-based ids): F1 is the plaque burden
//! `|plaque| / (|plaque| + |lumen|)`; F2..F27, F28..F53, F54..F79 and
//! F80..F105 are the fractions of Cap, Suf1, Suf2 and Suf3 pixels falling in
//! each of 26 intensity bins `[0,10], [11,20], ..., [241,250], [251,255]`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Class, GreyImage, Region, RoiMask};

pub const BIN_COUNT: usize = 26;
pub const FEATURE_COUNT: usize = 1 + 4 * BIN_COUNT;

/// Intensity bin of a pixel value.
pub fn bin_index(v: u8) -> usize {
    if v == 0 {
        0
    } else {
        (usize::from(v - 1) / 10).min(BIN_COUNT - 1)
    }
}

/// Inclusive intensity range of a bin.
pub fn bin_range(bin: usize) -> (u8, u8) {
    match bin {
        0 => (0, 10),
        b if b == BIN_COUNT - 1 => (251, 255),
        b => ((b * 10 + 1) as u8, (b * 10 + 10) as u8),
    }
}

/// What a feature id measures: `None` for F1, else the band and bin.
pub fn describe_feature(id: usize) -> Option<(Region, (u8, u8))> {
    if !(2..=FEATURE_COUNT).contains(&id) {
        return None;
    }
    let k = id - 2;
    Some((Region::BANDS[k / BIN_COUNT], bin_range(k % BIN_COUNT)))
}

/// One frame's features; index 0 holds F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Value of a 1-based feature id.
    pub fn feature(&self, id: usize) -> f64 {
        self.0[id - 1]
    }
}

pub fn extract_features(image: &GreyImage, roi: &RoiMask) -> Result<FeatureVector> {
    if image.width() != roi.width() || image.height() != roi.height() {
        return Err(Error::DimensionMismatch(format!(
            "image is {}x{} but roi is {}x{}",
            image.width(),
            image.height(),
            roi.width(),
            roi.height()
        )));
    }
    let mut hist = [[0usize; BIN_COUNT]; 4];
    let mut lumen = 0usize;
    for (&px, &region) in image.pixels().iter().zip(roi.regions()) {
        if let Some(band) = region.band_index() {
            hist[band][bin_index(px)] += 1;
        } else if region == Region::Lumen {
            lumen += 1;
        }
    }
    let sizes: Vec<usize> = hist.iter().map(|h| h.iter().sum()).collect();
    let plaque: usize = sizes.iter().sum();
    if plaque + lumen == 0 {
        return Err(Error::Empty("roi has neither plaque nor lumen pixels".into()));
    }

    let mut values = Vec::with_capacity(FEATURE_COUNT);
    values.push(plaque as f64 / (plaque + lumen) as f64);
    for (h, &size) in hist.iter().zip(&sizes) {
        for &count in h {
            values.push(if size == 0 { 0.0 } else { count as f64 / size as f64 });
        }
    }
    Ok(FeatureVector(values))
}

/// One labeled row of a [`FeatureMatrix`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub id: String,
    pub class: Class,
    pub values: Vec<f64>,
}

/// Labeled rows over a set of features; `feature_ids` are 1-based and name
/// each column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    feature_ids: Vec<usize>,
    rows: Vec<FeatureRow>,
}

impl FeatureMatrix {
    pub fn new(feature_ids: Vec<usize>, rows: Vec<FeatureRow>) -> Result<Self> {
        let width = feature_ids.len();
        if let Some(bad) = rows.iter().find(|r| r.values.len() != width) {
            return Err(Error::DimensionMismatch(format!(
                "row {} has {} values, expected {width}",
                bad.id,
                bad.values.len()
            )));
        }
        Ok(Self { feature_ids, rows })
    }

    /// Matrix over all 105 features.
    pub fn full(rows: Vec<FeatureRow>) -> Result<Self> {
        Self::new((1..=FEATURE_COUNT).collect(), rows)
    }

    pub fn feature_ids(&self) -> &[usize] {
        &self.feature_ids
    }

    pub fn rows(&self) -> &[FeatureRow] {
        &self.rows
    }

    pub fn n_features(&self) -> usize {
        self.feature_ids.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn classes(&self) -> Vec<Class> {
        self.rows.iter().map(|r| r.class).collect()
    }

    /// Rows at `indices`, in that order.
    pub fn subset_rows(&self, indices: &[usize]) -> Self {
        Self {
            feature_ids: self.feature_ids.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Columns at `positions` (0-based positions into this matrix), in that order.
    pub fn select_columns(&self, positions: &[usize]) -> Result<Self> {
        if let Some(&p) = positions.iter().find(|&&p| p >= self.n_features()) {
            return Err(Error::InvalidArgument(format!("column {p} out of {}", self.n_features())));
        }
        Ok(Self {
            feature_ids: positions.iter().map(|&p| self.feature_ids[p]).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| FeatureRow {
                    id: r.id.clone(),
                    class: r.class,
                    values: positions.iter().map(|&p| r.values[p]).collect(),
                })
                .collect(),
        })
    }
}

/// Per-column `min` and `max` of a training matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationParams {
    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }

    /// `(x - min) / (max - min)`, clipped to [0, 1]; constant columns map to 0.
    pub fn normalize(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values against {} normalization columns",
                values.len(),
                self.len()
            )));
        }
        Ok(values
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&x, (&lo, &hi))| if hi > lo { ((x - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 })
            .collect())
    }

    /// Parameters restricted to `positions`.
    pub fn select(&self, positions: &[usize]) -> Self {
        Self {
            min: positions.iter().map(|&p| self.min[p]).collect(),
            max: positions.iter().map(|&p| self.max[p]).collect(),
        }
    }
}

pub fn fit_normalizer(train: &FeatureMatrix) -> Result<NormalizationParams> {
    let first = train.rows().first().ok_or_else(|| Error::Empty("cannot fit a normalizer on zero rows".into()))?;
    let mut min = first.values.clone();
    let mut max = first.values.clone();
    for row in &train.rows()[1..] {
        for (j, &x) in row.values.iter().enumerate() {
            min[j] = min[j].min(x);
            max[j] = max[j].max(x);
        }
    }
    Ok(NormalizationParams { min, max })
}

pub fn apply_normalizer(params: &NormalizationParams, m: &FeatureMatrix) -> Result<FeatureMatrix> {
    if params.len() != m.n_features() {
        return Err(Error::DimensionMismatch(format!(
            "normalizer has {} columns, matrix has {}",
            params.len(),
            m.n_features()
        )));
    }
    let rows = m
        .rows()
        .iter()
        .map(|r| {
            Ok(FeatureRow { id: r.id.clone(), class: r.class, values: params.normalize(&r.values)? })
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureMatrix::new(m.feature_ids().to_vec(), rows)
}
