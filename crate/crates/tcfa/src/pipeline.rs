//! Stage helpers shared by the experiment runner and the single-stage
//! subcommands, plus the seed log.

use std::fmt::Write as _;

use anyhow::{Context, Result};
use rayon::prelude::*;
use tcfa_core::classifiers::rf::TREE_GRID;
use tcfa_core::classifiers::ClassifierKind;
use tcfa_core::features::{extract_features, FeatureMatrix, FeatureRow};
use tcfa_core::rng::{derive_indexed, derive_seed};
use tcfa_core::segment::precise_roi_segmentation;
use tcfa_core::sweep::ClassifierSpec;
use tcfa_core::synth::generate_corpus;
use tcfa_core::{LabeledSample, RoiMask};

use crate::config::{DataSource, ExperimentConfig};
use crate::corpus::load_corpus;

/// Every seed a run derives, one `name = value` line each, in the order
/// the stages draw them.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct SeedLog {
    lines: Vec<String>,
}

impl SeedLog {
    pub fn record(&mut self, name: &str, seed: u64) {
        self.lines.push(format!("{name} = {seed}"));
    }

    /// A family of seeds `derive_indexed(parent, i)` for `i` in `0..count`,
    /// written on one line.
    pub fn record_indexed(&mut self, name: &str, parent: u64, count: usize) {
        let mut line = format!("{name}[0..{count}] =");
        for i in 0..count {
            let _ = write!(line, " {}", derive_indexed(parent, i as u64));
        }
        self.lines.push(line);
    }

    /// The seed handed to a classifier and the seeds it derives internally.
    pub fn record_fit(&mut self, name: &str, spec: &ClassifierSpec, seed: u64) {
        self.record(name, seed);
        match spec {
            ClassifierSpec::Fnn(_) => {
                self.record(&format!("{name}/fnn/init"), derive_seed(seed, "fnn/init"));
                self.record(&format!("{name}/fnn/shuffle"), derive_seed(seed, "fnn/shuffle"));
            }
            ClassifierSpec::Knn => self.record(&format!("{name}/knn/validation"), derive_seed(seed, "knn/validation")),
            ClassifierSpec::Rf { trees } => self.record_indexed(&format!("{name}/tree"), seed, *trees),
        }
    }

    pub fn record_cnn(&mut self, name: &str, seed: u64) {
        self.record(name, seed);
        for stage in ["cnn/init", "cnn/shuffle", "cnn/dropout"] {
            self.record(&format!("{name}/{stage}"), derive_seed(seed, stage));
        }
    }

    pub fn render(&self) -> String {
        self.lines.iter().map(|l| format!("{l}\n")).collect()
    }
}

/// Generates or loads the frames of an experiment.
pub fn load_samples(cfg: &ExperimentConfig, log: &mut SeedLog) -> Result<Vec<LabeledSample>> {
    match &cfg.data {
        DataSource::Phantom { config, .. } => {
            let seed = cfg.phantom_seed().expect("phantom source has a seed");
            let pc = tcfa_core::synth::PhantomConfig { seed, ..config.clone() };
            log.record("phantom", seed);
            log.record_indexed("phantom/frame", seed, pc.size);
            Ok(generate_corpus(&pc).context("[generate]")?.0)
        }
        DataSource::Corpus(dir) => load_corpus(dir).context("[load]"),
    }
}

pub fn segment_all(samples: &[LabeledSample]) -> Vec<RoiMask> {
    samples.par_iter().map(|s| precise_roi_segmentation(&s.mask)).collect()
}

/// Segments every frame and extracts its 105 features, in input order.
pub fn extract_all(samples: &[LabeledSample]) -> Result<FeatureMatrix> {
    let rows = samples
        .par_iter()
        .map(|s| {
            let roi = precise_roi_segmentation(&s.mask);
            let values = extract_features(&s.image, &roi).with_context(|| format!("[extract] frame {}", s.id))?.0;
            Ok(FeatureRow { id: s.id.clone(), class: s.class, values })
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureMatrix::full(rows).context("[extract]")
}

/// The classifier spec an experiment trains.
pub fn main_spec(cfg: &ExperimentConfig, kind: ClassifierKind) -> ClassifierSpec {
    match kind {
        ClassifierKind::Fnn => ClassifierSpec::Fnn(cfg.fnn.clone()),
        ClassifierKind::Knn => ClassifierSpec::Knn,
        ClassifierKind::Rf => ClassifierSpec::Rf { trees: cfg.rf_trees },
    }
}

/// Sweep series for a family: the forest gets one series per tree count of
/// the standard grid (plus the configured count if it is not on the grid).
pub fn sweep_specs(cfg: &ExperimentConfig, kind: ClassifierKind) -> Vec<ClassifierSpec> {
    match kind {
        ClassifierKind::Rf => {
            let mut trees: Vec<usize> = TREE_GRID.to_vec();
            if !trees.contains(&cfg.rf_trees) {
                trees.push(cfg.rf_trees);
                trees.sort_unstable();
            }
            trees.into_iter().map(|trees| ClassifierSpec::Rf { trees }).collect()
        }
        _ => vec![main_spec(cfg, kind)],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_log_lines() {
        let mut log = SeedLog::default();
        log.record("a", 1);
        log.record_indexed("b", 7, 2);
        log.record_fit("c", &ClassifierSpec::Knn, 3);
        let text = log.render();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "a = 1");
        assert_eq!(lines[1], format!("b[0..2] = {} {}", derive_indexed(7, 0), derive_indexed(7, 1)));
        assert_eq!(lines[3], format!("c/knn/validation = {}", derive_seed(3, "knn/validation")));
    }

    #[test]
    fn forest_sweep_covers_grid() {
        let cfg = ExperimentConfig { rf_trees: 30, ..ExperimentConfig::default() };
        let labels: Vec<String> = sweep_specs(&cfg, ClassifierKind::Rf).iter().map(|s| s.label()).collect();
        assert_eq!(labels, ["rf-10", "rf-30", "rf-50", "rf-100"]);
        assert_eq!(sweep_specs(&ExperimentConfig::default(), ClassifierKind::Rf).len(), 3);
    }
}
