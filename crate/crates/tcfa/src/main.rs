use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use tcfa::config::{Classifier, DataSource, ExperimentConfig};
use tcfa::corpus::{load_corpus, save_corpus, save_rois};
use tcfa::formats;
use tcfa::model_file::{load_model, save_model, Predictor};
use tcfa::pipeline::{extract_all, main_spec, segment_all, sweep_specs, SeedLog};
use tcfa::run_experiment;
use tcfa_core::augment::augment_minority;
use tcfa_core::classifiers::fnn::fnn_train_logged;
use tcfa_core::classifiers::TrainedModel;
use tcfa_core::cnn::{cnn_train, CnnConfig, ImageSet};
use tcfa_core::eval::{evaluate, stratified_split, SplitSpec};
use tcfa_core::features::{apply_normalizer, FeatureMatrix};
use tcfa_core::rng::derive_seed;
use tcfa_core::selection::select_top_n;
use tcfa_core::sweep::{feature_sweep, fit_classifier, prepare, ClassifierSpec};
use tcfa_core::synth::generate_corpus;
use tcfa_core::{Class, LabeledSample};

/// Thin-cap fibroatheroma classification of intravascular ultrasound frames.
#[derive(Debug, Parser)]
#[command(name = "tcfa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Key-value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory of the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// fnn, knn, rf or cnn.
    #[arg(long, global = true)]
    classifier: Option<Classifier>,
    /// Sweep the number of top-ranked features.
    #[arg(long, global = true)]
    sweep: bool,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a phantom corpus (frames, masks, manifest) to --out.
    Generate,
    /// Write the six-region segmentation of every corpus frame to --out.
    Segment {
        #[arg(long)]
        input: PathBuf,
    },
    /// Extract the 105 features of every corpus frame into the CSV at --out.
    Extract {
        #[arg(long)]
        input: PathBuf,
    },
    /// Split a feature CSV, fit the normalizer and rank features on the
    /// training side; writes train.csv, test.csv, normalization.csv and
    /// ranking.csv to --out.
    Select {
        #[arg(long)]
        input: PathBuf,
    },
    /// Train a classifier. Feature classifiers read a `select` directory,
    /// the CNN reads a corpus directory. Writes model.json to --out.
    Train {
        #[arg(long)]
        input: PathBuf,
        /// Number of top-ranked features (feature classifiers).
        #[arg(long)]
        top_n: Option<usize>,
    },
    /// Score a feature CSV or corpus with a model; writes report.json and
    /// roc.csv to --out.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// AUC against the number of top features for a `select` directory.
    Sweep {
        #[arg(long)]
        input: PathBuf,
    },
    /// The whole pipeline into a fresh run directory at --out.
    RunAll,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.threads {
        Some(0) => Err(anyhow!("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| anyhow!("cannot start {n} worker threads: {e}"))
            .and_then(|pool| pool.install(|| dispatch(&cli))),
        None => dispatch(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tcfa: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p).context("[config]")?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(c) = cli.classifier {
        cfg.classifier = c;
    }
    if cli.sweep {
        cfg.sweep = true;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    cfg.validate().map_err(|e| anyhow!("[config] {e}"))?;
    Ok(cfg)
}

fn out_path(cfg: &ExperimentConfig) -> Result<&Path> {
    cfg.out.as_deref().ok_or_else(|| anyhow!("--out is required"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Generate => generate(&cfg),
        Command::Segment { input } => segment(&cfg, input),
        Command::Extract { input } => extract(&cfg, input),
        Command::Select { input } => select(&cfg, input),
        Command::Train { input, top_n } => train(&cfg, input, *top_n),
        Command::Eval { model, input } => eval(&cfg, model, input),
        Command::Sweep { input } => sweep(&cfg, input),
        Command::RunAll => {
            let out = out_path(&cfg)?;
            let report = run_experiment(&cfg, out)?;
            eprintln!(
                "{}: AUC {:.4}, specificity {:.2}%, sensitivity {:.2}% ({}) -> {}",
                report.classifier,
                report.evaluation.auc,
                report.evaluation.specificity_pct,
                report.evaluation.sensitivity_pct,
                report.evaluation.guideline,
                out.display()
            );
            Ok(())
        }
    }
}

fn generate(cfg: &ExperimentConfig) -> Result<()> {
    let DataSource::Phantom { config, .. } = &cfg.data else {
        bail!("[generate] data must be phantom");
    };
    let pc = tcfa_core::synth::PhantomConfig { seed: cfg.phantom_seed().unwrap_or(cfg.seed), ..config.clone() };
    let (samples, manifest) = generate_corpus(&pc).context("[generate]")?;
    let out = out_path(cfg)?;
    save_corpus(out, &samples, &manifest).context("[generate]")?;
    eprintln!("wrote {} frames to {}", samples.len(), out.display());
    Ok(())
}

fn segment(cfg: &ExperimentConfig, input: &Path) -> Result<()> {
    let samples = load_corpus(input).context("[load]")?;
    let rois = segment_all(&samples);
    let named: Vec<_> = samples.iter().map(|s| s.id.clone()).zip(rois).collect();
    save_rois(out_path(cfg)?, &named).context("[segment]")
}

fn extract(cfg: &ExperimentConfig, input: &Path) -> Result<()> {
    let samples = load_corpus(input).context("[load]")?;
    let m = extract_all(&samples)?;
    formats::write_features(out_path(cfg)?, &m).context("[extract]")
}

fn split_of(cfg: &ExperimentConfig, classes: &[Class]) -> Result<(SplitSpec, Vec<usize>, Vec<usize>)> {
    let spec = SplitSpec::new(cfg.train_fraction, derive_seed(cfg.seed, "split")).map_err(|e| anyhow!("[split] {e}"))?;
    let (tr, te) = stratified_split(classes, &spec).context("[split]")?;
    Ok((spec, tr, te))
}

fn select(cfg: &ExperimentConfig, input: &Path) -> Result<()> {
    let all = formats::read_features(input).context("[load]")?;
    let (_, tr, te) = split_of(cfg, &all.classes())?;
    let (train, test) = (all.subset_rows(&tr), all.subset_rows(&te));
    let (normalizer, ranking, _, _) = prepare(&train, &test).context("[select]")?;
    let out = out_path(cfg)?;
    create_dir(out)?;
    formats::write_features(&out.join("train.csv"), &train).context("[select]")?;
    formats::write_features(&out.join("test.csv"), &test).context("[select]")?;
    formats::write_normalization(&out.join("normalization.csv"), train.feature_ids(), &normalizer).context("[select]")?;
    formats::write_ranking(&out.join("ranking.csv"), &ranking).context("[select]")
}

/// Normalized train/test matrices and ranking from a `select` directory.
fn read_selection(dir: &Path) -> Result<(FeatureMatrix, FeatureMatrix, tcfa_core::features::NormalizationParams, tcfa_core::selection::FeatureRanking)> {
    let train = formats::read_features(&dir.join("train.csv")).context("[load]")?;
    let test = formats::read_features(&dir.join("test.csv")).context("[load]")?;
    let (ids, normalizer) = formats::read_normalization(&dir.join("normalization.csv")).context("[load]")?;
    if ids != train.feature_ids() || ids != test.feature_ids() {
        bail!("[load] normalization columns do not match the feature files");
    }
    let ranking = formats::read_ranking(&dir.join("ranking.csv"), &ids).context("[load]")?;
    let train_n = apply_normalizer(&normalizer, &train).context("[select]")?;
    let test_n = apply_normalizer(&normalizer, &test).context("[select]")?;
    Ok((train_n, test_n, normalizer, ranking))
}

fn train(cfg: &ExperimentConfig, input: &Path, top_n: Option<usize>) -> Result<()> {
    let out = out_path(cfg)?;
    create_dir(out)?;
    let mut log = SeedLog::default();
    let predictor = match cfg.classifier {
        Classifier::Features(kind) => {
            let (train_n, _, normalizer, ranking) = read_selection(input)?;
            let n = top_n.unwrap_or(cfg.top_n);
            let sel = select_top_n(&ranking, &train_n, n).context("[train]")?;
            let spec = main_spec(cfg, kind);
            let seed = derive_seed(cfg.seed, "train");
            log.record_fit("train", &spec, seed);
            let model = match &spec {
                ClassifierSpec::Fnn(fc) => {
                    let (m, losses) = fnn_train_logged(&sel, fc, seed).context("[train]")?;
                    formats::write_fnn_log(&out.join("train_log.csv"), &losses, fc.learning_rate, fc.lr_decay)
                        .context("[train]")?;
                    TrainedModel::Fnn(m)
                }
                _ => fit_classifier(&spec, &sel, seed).context("[train]")?.0,
            };
            let columns = ranking.top_columns(n);
            Predictor::Features {
                features: columns.iter().map(|&c| train_n.feature_ids()[c]).collect(),
                normalizer: normalizer.select(&columns),
                model,
            }
        }
        Classifier::Cnn => {
            let samples = load_corpus(input).context("[load]")?;
            let classes: Vec<Class> = samples.iter().map(|s| s.class).collect();
            let (split, tr, _) = split_of(cfg, &classes)?;
            log.record("split", split.seed);
            let train: Vec<&LabeledSample> = tr.iter().map(|&i| &samples[i]).collect();
            let inner_split = SplitSpec::new(1.0 - cfg.cnn_validation, derive_seed(cfg.seed, "cnn/validation"))
                .map_err(|e| anyhow!("[split] {e}"))?;
            log.record("cnn/validation", inner_split.seed);
            let train_classes: Vec<Class> = train.iter().map(|s| s.class).collect();
            let (inner, val) = stratified_split(&train_classes, &inner_split).context("[split]")?;
            let inner: Vec<LabeledSample> = inner.iter().map(|&i| train[i].clone()).collect();
            let augment_seed = derive_seed(cfg.seed, "augment");
            log.record("augment", augment_seed);
            let augmented = augment_minority(&inner, augment_seed).context("[augment]")?;
            let side = samples.first().map(|s| s.image.side()).ok_or_else(|| anyhow!("[train] empty corpus"))?;
            let cnn_cfg = CnnConfig { side, seed: derive_seed(cfg.seed, "cnn"), ..cfg.cnn.clone() };
            log.record_cnn("cnn", cnn_cfg.seed);
            let train_set = ImageSet::from_samples(&augmented).context("[train]")?;
            let val_set = ImageSet::from_images(val.iter().map(|&i| (&train[i].image, train[i].class))).context("[train]")?;
            let (model, tlog) = cnn_train(&train_set, &val_set, &cnn_cfg).context("[train]")?;
            formats::write_train_log(&out.join("train_log.csv"), &tlog).context("[train]")?;
            Predictor::Image { split: Some(split), model }
        }
    };
    fs::write(out.join("seeds.log"), log.render()).context("[train]")?;
    save_model(&out.join("model.json"), &predictor).context("[train]")
}

fn eval(cfg: &ExperimentConfig, model: &Path, input: &Path) -> Result<()> {
    let predictor = load_model(model).context("[load]")?;
    let (scores, labels) = match &predictor {
        Predictor::Features { .. } => {
            let m = formats::read_features(input).context("[load]")?;
            (predictor.score_features(&m).map_err(|e| anyhow!("[eval] {e}"))?, m.classes())
        }
        Predictor::Image { split, .. } => {
            let samples = load_corpus(input).context("[load]")?;
            let held_out: Vec<usize> = match split {
                Some(s) => {
                    let classes: Vec<Class> = samples.iter().map(|s| s.class).collect();
                    stratified_split(&classes, s).context("[split]")?.1
                }
                None => (0..samples.len()).collect(),
            };
            let set = ImageSet::from_images(held_out.iter().map(|&i| (&samples[i].image, samples[i].class))).context("[eval]")?;
            (predictor.score_images(&set).map_err(|e| anyhow!("[eval] {e}"))?, set.classes().to_vec())
        }
    };
    let (report, roc) = evaluate(&scores, &labels).context("[eval]")?;
    let out = out_path(cfg)?;
    create_dir(out)?;
    formats::write_roc(&out.join("roc.csv"), &roc).context("[eval]")?;
    let mut json = serde_json::to_string_pretty(&report).context("[eval]")?;
    json.push('\n');
    fs::write(out.join("report.json"), json).context("[eval]")?;
    eprintln!("{}: AUC {:.4} ({})", predictor.classifier_name(), report.auc, report.guideline);
    Ok(())
}

fn sweep(cfg: &ExperimentConfig, input: &Path) -> Result<()> {
    let Classifier::Features(kind) = cfg.classifier else {
        bail!("[sweep] the sweep needs a feature classifier");
    };
    let train = formats::read_features(&input.join("train.csv")).context("[load]")?;
    let test = formats::read_features(&input.join("test.csv")).context("[load]")?;
    let specs = sweep_specs(cfg, kind);
    let result = feature_sweep(&train, &test, &specs, &cfg.sweep_ns, derive_seed(cfg.seed, "sweep")).context("[sweep]")?;
    let out = out_path(cfg)?;
    create_dir(out)?;
    for s in &result.series {
        formats::write_sweep(&out.join(format!("sweep_{}.csv", s.label)), &s.points).context("[sweep]")?;
        eprintln!("{}: best AUC {:.4} at N = {}", s.label, s.best.report.auc, s.best.n);
    }
    Ok(())
}
