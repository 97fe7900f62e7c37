#![allow(dead_code)]

use tcfa_core::features::{extract_features, FeatureMatrix, FeatureRow};
use tcfa_core::segment::precise_roi_segmentation;
use tcfa_core::synth::{generate_corpus, PhantomConfig};
use tcfa_core::{Class, LabeledSample};

pub fn feature_matrix(samples: &[LabeledSample]) -> FeatureMatrix {
    let rows = samples
        .iter()
        .map(|s| {
            let roi = precise_roi_segmentation(&s.mask);
            FeatureRow { id: s.id.clone(), class: s.class, values: extract_features(&s.image, &roi).unwrap().0 }
        })
        .collect();
    FeatureMatrix::full(rows).unwrap()
}

pub fn phantom_features(cfg: &PhantomConfig) -> FeatureMatrix {
    feature_matrix(&generate_corpus(cfg).unwrap().0)
}

pub fn class(bit: bool) -> Class {
    if bit {
        Class::Tcfa
    } else {
        Class::Normal
    }
}

pub fn matrix(points: &[(Vec<f64>, bool)]) -> FeatureMatrix {
    let width = points[0].0.len();
    FeatureMatrix::new(
        (1..=width).collect(),
        points
            .iter()
            .enumerate()
            .map(|(i, (v, c))| FeatureRow { id: format!("r{i}"), class: class(*c), values: v.clone() })
            .collect(),
    )
    .unwrap()
}
