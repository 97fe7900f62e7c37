//! One end-to-end experiment written to a run directory.
//!
//! Everything is first written to a hidden staging directory next to the
//! target and renamed into place once the run has succeeded, so a failed
//! run never leaves a half-written directory behind and a finished one is
//! never overwritten. Nothing in a run directory depends on the wall clock,
//! the thread count or the output path.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use tcfa_core::augment::augment_minority;
use tcfa_core::classifiers::fnn::fnn_train_logged;
use tcfa_core::classifiers::knn::KnnChoice;
use tcfa_core::classifiers::{ClassifierKind, TrainedModel};
use tcfa_core::cnn::{cnn_train, CnnConfig, ImageSet, StopReason};
use tcfa_core::eval::{evaluate, stratified_split, EvalReport, RocCurve, SplitSpec};
use tcfa_core::rng::derive_seed;
use tcfa_core::selection::select_top_n;
use tcfa_core::sweep::{feature_sweep, fit_classifier, point_seed, prepare, ClassifierSpec};
use tcfa_core::{Class, LabeledSample};

use crate::config::{Classifier, ExperimentConfig};
use crate::formats;
use crate::model_file::{save_model, Predictor};
use crate::pipeline::{extract_all, load_samples, main_spec, sweep_specs, SeedLog};

pub const REPORT_FILE: &str = "report.json";

/// Best point of one sweep series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub label: String,
    pub best_n: usize,
    pub best_auc: f64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stop: StopReason,
    pub training_frames: usize,
    pub validation_frames: usize,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub classifier: String,
    pub seed: u64,
    pub train_frames: usize,
    pub test_frames: usize,
    #[serde(flatten)]
    pub evaluation: EvalReport,
    /// Number of top-ranked features the final model uses.
    pub features: Option<usize>,
    pub knn: Option<KnnChoice>,
    pub sweep: Vec<SeriesSummary>,
    pub cnn: Option<CnnSummary>,
    /// Every other file in the run directory.
    pub files: Vec<String>,
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    dir: &'a Path,
    log: SeedLog,
    notes: Vec<String>,
}

impl Run<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn note(&mut self, stage: &str, text: String) {
        self.notes.push(format!("[{stage}] {text}"));
    }
}

struct Outcome {
    scores: Vec<f64>,
    labels: Vec<Class>,
    train_frames: usize,
    features: Option<usize>,
    knn: Option<KnnChoice>,
    sweep: Vec<SeriesSummary>,
    cnn: Option<CnnSummary>,
}

/// Runs `cfg` and writes its run directory at `out`, which must not exist
/// yet (an empty directory is accepted).
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentReport> {
    cfg.validate().map_err(|e| anyhow!("[config] {e}"))?;
    if out.exists() {
        let empty = out.is_dir() && fs::read_dir(out).map(|mut d| d.next().is_none()).unwrap_or(false);
        if !empty {
            bail!("[output] {} already exists; refusing to overwrite a run directory", out.display());
        }
    }
    let name = out.file_name().ok_or_else(|| anyhow!("[output] {} has no directory name", out.display()))?;
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).with_context(|| format!("[output] creating {}", parent.display()))?;
    // a private staging directory per run, so concurrent runs never share one
    let staging = tempfile::Builder::new()
        .prefix(&format!(".{}.", name.to_string_lossy()))
        .suffix(".partial")
        .tempdir_in(&parent)
        .with_context(|| format!("[output] creating a staging directory in {}", parent.display()))?;

    let report = run_into(cfg, staging.path())?;
    if out.exists() {
        fs::remove_dir(out).with_context(|| format!("[output] replacing empty {}", out.display()))?;
    }
    fs::rename(staging.path(), out).with_context(|| format!("[output] moving run into {}", out.display()))?;
    let _ = staging.keep();
    Ok(report)
}

fn run_into(cfg: &ExperimentConfig, dir: &Path) -> Result<ExperimentReport> {
    let mut run = Run { cfg, dir, log: SeedLog::default(), notes: Vec::new() };
    run.log.record("master", cfg.seed);

    let samples = load_samples(cfg, &mut run.log)?;
    let (normal, tcfa) = tcfa_core::image::class_counts(samples.iter().map(|s| &s.class));
    run.note("data", format!("{} frames, {normal} normal / {tcfa} TCFA", samples.len()));

    let split = SplitSpec::new(cfg.train_fraction, derive_seed(cfg.seed, "split")).map_err(|e| anyhow!("[split] {e}"))?;
    run.log.record("split", split.seed);
    let classes: Vec<Class> = samples.iter().map(|s| s.class).collect();
    let (train_idx, test_idx) = stratified_split(&classes, &split).context("[split]")?;
    run.note("split", format!("{} train / {} test", train_idx.len(), test_idx.len()));

    let outcome = match cfg.classifier {
        Classifier::Features(kind) => run_features(&mut run, kind, &samples, &train_idx, &test_idx)?,
        Classifier::Cnn => run_cnn(&mut run, &samples, &train_idx, &test_idx, split)?,
    };

    let (evaluation, roc) = evaluate(&outcome.scores, &outcome.labels).context("[eval]")?;
    finish(run, evaluation, &roc, outcome, test_idx.len())
}

fn run_features(
    run: &mut Run,
    kind: ClassifierKind,
    samples: &[LabeledSample],
    train_idx: &[usize],
    test_idx: &[usize],
) -> Result<Outcome> {
    let cfg = run.cfg;
    let all = extract_all(samples)?;
    formats::write_features(&run.path("features.csv"), &all).context("[extract]")?;
    let train = all.subset_rows(train_idx);
    let test = all.subset_rows(test_idx);

    let (normalizer, ranking, train_n, test_n) = prepare(&train, &test).context("[select]")?;
    formats::write_normalization(&run.path("normalization.csv"), train.feature_ids(), &normalizer).context("[select]")?;
    formats::write_ranking(&run.path("ranking.csv"), &ranking).context("[select]")?;
    let top: Vec<String> = ranking.entries.iter().take(10).map(|e| format!("F{}", e.feature)).collect();
    run.note("select", format!("top features {}", top.join(" ")));

    let spec = main_spec(cfg, kind);
    let mut sweep = Vec::new();
    let (n, model_seed) = if cfg.sweep {
        let specs = sweep_specs(cfg, kind);
        let sweep_seed = derive_seed(cfg.seed, "sweep");
        run.log.record("sweep", sweep_seed);
        for s in &specs {
            for &n in &cfg.sweep_ns {
                run.log.record_fit(&format!("sweep/{}/n{n}", s.label()), s, point_seed(sweep_seed, s, n));
            }
        }
        let result = feature_sweep(&train, &test, &specs, &cfg.sweep_ns, sweep_seed).context("[sweep]")?;
        for series in &result.series {
            let file = format!("sweep_{}.csv", series.label);
            formats::write_sweep(&run.path(&file), &series.points).context("[sweep]")?;
            sweep.push(SeriesSummary { label: series.label.clone(), best_n: series.best.n, best_auc: series.best.report.auc, file });
        }
        let best = sweep.iter().find(|s| s.label == spec.label()).expect("main spec is swept").best_n;
        run.note("sweep", format!("{} best at N = {best}", spec.label()));
        (best, point_seed(sweep_seed, &spec, best))
    } else {
        (cfg.top_n, derive_seed(cfg.seed, "train"))
    };
    run.log.record_fit("train", &spec, model_seed);

    let train_sel = select_top_n(&ranking, &train_n, n).context("[train]")?;
    let test_sel = select_top_n(&ranking, &test_n, n).context("[eval]")?;
    let (model, knn) = match &spec {
        ClassifierSpec::Fnn(fc) => {
            let (m, losses) = fnn_train_logged(&train_sel, fc, model_seed).context("[train]")?;
            formats::write_fnn_log(&run.path("train_log.csv"), &losses, fc.learning_rate, fc.lr_decay).context("[train]")?;
            (TrainedModel::Fnn(m), None)
        }
        _ => fit_classifier(&spec, &train_sel, model_seed).context("[train]")?,
    };
    if let Some(k) = &knn {
        run.note("train", format!("knn k = {} weighting = {}", k.k, k.weighting.name()));
    }
    let scores = model.score_matrix(&test_sel).context("[eval]")?;

    let columns = ranking.top_columns(n);
    let predictor = Predictor::Features {
        features: columns.iter().map(|&c| train.feature_ids()[c]).collect(),
        normalizer: normalizer.select(&columns),
        model,
    };
    save_model(&run.path("model.json"), &predictor).context("[train]")?;
    Ok(Outcome {
        scores,
        labels: test_sel.classes(),
        train_frames: train_idx.len(),
        features: Some(n),
        knn,
        sweep,
        cnn: None,
    })
}

fn run_cnn(
    run: &mut Run,
    samples: &[LabeledSample],
    train_idx: &[usize],
    test_idx: &[usize],
    split: SplitSpec,
) -> Result<Outcome> {
    let cfg = run.cfg;
    let train: Vec<LabeledSample> = train_idx.iter().map(|&i| samples[i].clone()).collect();
    let inner_split = SplitSpec::new(1.0 - cfg.cnn_validation, derive_seed(cfg.seed, "cnn/validation"))
        .map_err(|e| anyhow!("[split] {e}"))?;
    run.log.record("cnn/validation", inner_split.seed);
    let train_classes: Vec<Class> = train.iter().map(|s| s.class).collect();
    let (inner_idx, val_idx) = stratified_split(&train_classes, &inner_split).context("[split]")?;
    let inner: Vec<LabeledSample> = inner_idx.iter().map(|&i| train[i].clone()).collect();

    let augment_seed = derive_seed(cfg.seed, "augment");
    run.log.record("augment", augment_seed);
    let augmented = augment_minority(&inner, augment_seed).context("[augment]")?;
    let (normal, tcfa) = tcfa_core::image::class_counts(augmented.iter().map(|s| &s.class));
    run.note("augment", format!("{} frames after augmentation, {normal} normal / {tcfa} TCFA", augmented.len()));

    let side = samples.first().map(|s| s.image.side()).ok_or_else(|| anyhow!("[train] no frames"))?;
    let cnn_cfg = CnnConfig { side, seed: derive_seed(cfg.seed, "cnn"), ..cfg.cnn.clone() };
    run.log.record_cnn("cnn", cnn_cfg.seed);
    let train_set = ImageSet::from_samples(&augmented).context("[train]")?;
    let val_set = ImageSet::from_images(val_idx.iter().map(|&i| (&train[i].image, train[i].class))).context("[train]")?;
    let (model, log) = cnn_train(&train_set, &val_set, &cnn_cfg).context("[train]")?;
    formats::write_train_log(&run.path("train_log.csv"), &log).context("[train]")?;
    run.note("train", format!("stopped by {} after {} epochs, best epoch {}", log.stop.name(), log.epochs.len(), log.best_epoch));

    let test_set = ImageSet::from_images(test_idx.iter().map(|&i| (&samples[i].image, samples[i].class))).context("[eval]")?;
    let scores = model.score_set(&test_set).context("[eval]")?;
    let summary = CnnSummary {
        epochs_run: log.epochs.len(),
        best_epoch: log.best_epoch,
        stop: log.stop,
        training_frames: train_set.len(),
        validation_frames: val_set.len(),
    };
    save_model(&run.path("model.json"), &Predictor::Image { split: Some(split), model }).context("[train]")?;
    Ok(Outcome {
        scores,
        labels: test_set.classes().to_vec(),
        train_frames: train_idx.len(),
        features: None,
        knn: None,
        sweep: Vec::new(),
        cnn: Some(summary),
    })
}

fn finish(run: Run, evaluation: EvalReport, roc: &RocCurve, outcome: Outcome, test_frames: usize) -> Result<ExperimentReport> {
    formats::write_roc(&run.path("roc.csv"), roc).context("[report]")?;
    fs::write(run.path("config.txt"), run.cfg.echo()).context("[report] writing config echo")?;
    let mut log = String::from("# stages\n");
    for n in &run.notes {
        log.push_str(n);
        log.push('\n');
    }
    log.push_str("# seeds\n");
    log.push_str(&run.log.render());
    log.push_str("# config\n");
    log.push_str(&run.cfg.echo());
    fs::write(run.path("run.log"), log).context("[report] writing run log")?;

    let mut files: Vec<String> = fs::read_dir(run.dir)
        .context("[report]")?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<std::io::Result<_>>()
        .context("[report]")?;
    files.sort();
    let report = ExperimentReport {
        classifier: run.cfg.classifier.name().into(),
        seed: run.cfg.seed,
        train_frames: outcome.train_frames,
        test_frames,
        evaluation,
        features: outcome.features,
        knn: outcome.knn,
        sweep: outcome.sweep,
        cnn: outcome.cnn,
        files,
    };
    let mut json = serde_json::to_string_pretty(&report).context("[report]")?;
    json.push('\n');
    fs::write(run.path(REPORT_FILE), json).context("[report] writing report")?;
    Ok(report)
}
