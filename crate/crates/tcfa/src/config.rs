//! Experiment configuration as `key = value` text.
//!
//! Blank lines and `#` comments are ignored. Unknown keys and malformed
//! values are errors that name the offending line. [`ExperimentConfig::echo`]
//! writes every key back in a canonical order, and parsing that echo
//! reproduces the configuration exactly.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use tcfa_core::classifiers::{ClassifierKind, FnnConfig};
use tcfa_core::cnn::{CnnConfig, ConvBlock};
use tcfa_core::features::FEATURE_COUNT;
use tcfa_core::synth::{Intensity, PhantomConfig};

/// Classifier family of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classifier {
    Features(ClassifierKind),
    Cnn,
}

impl Classifier {
    pub fn name(self) -> &'static str {
        match self {
            Classifier::Features(k) => k.name(),
            Classifier::Cnn => "cnn",
        }
    }
}

impl FromStr for Classifier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "fnn" => Ok(Classifier::Features(ClassifierKind::Fnn)),
            "knn" => Ok(Classifier::Features(ClassifierKind::Knn)),
            "rf" => Ok(Classifier::Features(ClassifierKind::Rf)),
            "cnn" => Ok(Classifier::Cnn),
            other => Err(format!("unknown classifier {other:?} (expected fnn, knn, rf or cnn)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Generate frames with the phantom generator. `phantom.seed` unset
    /// means the master seed.
    Phantom { config: PhantomConfig, seed: Option<u64> },
    /// Load a corpus directory.
    Corpus(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub classifier: Classifier,
    pub data: DataSource,
    pub out: Option<PathBuf>,
    pub train_fraction: f64,
    pub sweep: bool,
    /// N values visited by the sweep.
    pub sweep_ns: Vec<usize>,
    /// Number of top-ranked features used when the sweep is off.
    pub top_n: usize,
    pub fnn: FnnConfig,
    pub rf_trees: usize,
    pub cnn: CnnConfig,
    /// Share of the training frames held out for CNN early stopping.
    pub cnn_validation: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            classifier: Classifier::Features(ClassifierKind::Knn),
            data: DataSource::Phantom { config: PhantomConfig::default(), seed: None },
            out: None,
            train_fraction: 0.8,
            sweep: false,
            sweep_ns: (1..=FEATURE_COUNT).collect(),
            top_n: FEATURE_COUNT,
            fnn: FnnConfig::default(),
            rf_trees: 100,
            cnn: CnnConfig::default(),
            cnn_validation: 0.1,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{origin}:{line}: {message}")]
pub struct ConfigError {
    pub origin: String,
    pub line: usize,
    pub message: String,
}

fn parse<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?}"))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("expected a boolean, got {v:?}")),
    }
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, String> {
    v.split(',').map(|p| parse(p.trim())).collect()
}

fn parse_pair(v: &str) -> Result<(f64, f64), String> {
    match parse_list::<f64>(v)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(format!("expected two numbers, got {v:?}")),
    }
}

fn parse_intensity(v: &str) -> Result<Intensity, String> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [m, s, lo, hi] => Ok(Intensity::new(parse(m)?, parse(s)?, parse(lo)?, parse(hi)?)),
        _ => Err(format!("expected mean,sd,min,max, got {v:?}")),
    }
}

/// `2x16,2x32` style block plans.
fn parse_blocks(v: &str) -> Result<Vec<ConvBlock>, String> {
    v.split(',')
        .map(|b| {
            let (convs, channels) = b.trim().split_once('x').ok_or_else(|| format!("block {b:?} is not <convs>x<channels>"))?;
            Ok(ConvBlock::new(parse(convs)?, parse(channels)?))
        })
        .collect()
}

/// `all` or a list of N values with optional `a-b` ranges.
fn parse_ns(v: &str) -> Result<Vec<usize>, String> {
    if v == "all" {
        return Ok((1..=FEATURE_COUNT).collect());
    }
    let mut out = Vec::new();
    for part in v.split(',').map(str::trim) {
        match part.split_once('-') {
            Some((a, b)) => out.extend(parse::<usize>(a)?..=parse::<usize>(b)?),
            None => out.push(parse(part)?),
        }
    }
    if out.is_empty() || out.iter().any(|&n| n == 0 || n > FEATURE_COUNT) {
        return Err(format!("sweep N values must lie in 1..={FEATURE_COUNT}"));
    }
    Ok(out)
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn phantom_mut(&mut self) -> Result<&mut PhantomConfig, String> {
        match &mut self.data {
            DataSource::Phantom { config, .. } => Ok(config),
            DataSource::Corpus(_) => Err("phantom.* keys need data = phantom".into()),
        }
    }

    /// Sets one key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "seed" => self.seed = parse(v)?,
            "classifier" => self.classifier = v.parse()?,
            "data" => {
                self.data = if v == "phantom" {
                    match &self.data {
                        DataSource::Phantom { .. } => self.data.clone(),
                        DataSource::Corpus(_) => DataSource::Phantom { config: PhantomConfig::default(), seed: None },
                    }
                } else {
                    DataSource::Corpus(PathBuf::from(v))
                }
            }
            "out" => self.out = Some(PathBuf::from(v)),
            "split.train_fraction" => self.train_fraction = parse(v)?,
            "sweep" => self.sweep = parse_bool(v)?,
            "sweep.n" => self.sweep_ns = parse_ns(v)?,
            "top_n" => self.top_n = parse(v)?,
            "fnn.hidden" => self.fnn.hidden = parse_list(v)?,
            "fnn.learning_rate" => self.fnn.learning_rate = parse(v)?,
            "fnn.lr_decay" => self.fnn.lr_decay = parse(v)?,
            "fnn.batch_size" => self.fnn.batch_size = parse(v)?,
            "fnn.epochs" => self.fnn.epochs = parse(v)?,
            "fnn.l2" => self.fnn.l2 = parse(v)?,
            "fnn.rho" => self.fnn.rho = parse(v)?,
            "fnn.epsilon" => self.fnn.epsilon = parse(v)?,
            "rf.trees" => self.rf_trees = parse(v)?,
            "cnn.blocks" => self.cnn.blocks = parse_blocks(v)?,
            "cnn.dense" => self.cnn.dense = parse(v)?,
            "cnn.gamma" => self.cnn.gamma = parse(v)?,
            "cnn.dropout" => self.cnn.dropout = parse(v)?,
            "cnn.batch_size" => self.cnn.batch_size = parse(v)?,
            "cnn.learning_rate" => self.cnn.learning_rate = parse(v)?,
            "cnn.epochs" => self.cnn.epochs = parse(v)?,
            "cnn.patience" => self.cnn.patience = parse(v)?,
            "cnn.bn_momentum" => self.cnn.bn_momentum = parse(v)?,
            "cnn.bn_epsilon" => self.cnn.bn_epsilon = parse(v)?,
            "cnn.rho" => self.cnn.rho = parse(v)?,
            "cnn.epsilon" => self.cnn.epsilon = parse(v)?,
            "cnn.validation_fraction" => self.cnn_validation = parse(v)?,
            "phantom.seed" => match &mut self.data {
                DataSource::Phantom { seed, .. } => *seed = Some(parse(v)?),
                DataSource::Corpus(_) => return Err("phantom.* keys need data = phantom".into()),
            },
            k if k.starts_with("phantom.") => {
                let p = self.phantom_mut()?;
                match &k["phantom.".len()..] {
                    "side" => p.side = parse(v)?,
                    "size" => p.size = parse(v)?,
                    "tcfa_fraction" => p.tcfa_fraction = parse(v)?,
                    "lumen_radius" => p.lumen_radius = parse_pair(v)?,
                    "eem_radius" => p.eem_radius = parse_pair(v)?,
                    "center_jitter" => p.center_jitter = parse(v)?,
                    "wobble" => p.wobble = parse(v)?,
                    "lumen" => p.lumen = parse_intensity(v)?,
                    "plaque" => p.plaque = parse_intensity(v)?,
                    "adventitia" => p.adventitia = parse_intensity(v)?,
                    "signature" => p.signature = parse(v)?,
                    "dark_probability" => p.dark_probability = parse(v)?,
                    "burden_inflation" => p.burden_inflation = parse(v)?,
                    "bright_probability" => p.bright_probability = parse(v)?,
                    "spread" => p.spread = parse(v)?,
                    _ => return Err(format!("unknown key {key:?}")),
                }
            }
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let err = |message: String| ConfigError { origin: origin.to_owned(), line: i + 1, message };
            let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            self.set(key.trim(), value.trim()).map_err(err)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, anyhow::Error> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    /// The seed the phantom generator runs with.
    pub fn phantom_seed(&self) -> Option<u64> {
        match &self.data {
            DataSource::Phantom { seed, .. } => Some(seed.unwrap_or(self.seed)),
            DataSource::Corpus(_) => None,
        }
    }

    /// Every key except `out` in canonical order. The output directory is
    /// left out so that identical experiments echo identically wherever
    /// they are written.
    pub fn echo(&self) -> String {
        let mut kv: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("classifier", self.classifier.name().into()),
            (
                "data",
                match &self.data {
                    DataSource::Phantom { .. } => "phantom".into(),
                    DataSource::Corpus(p) => p.display().to_string(),
                },
            ),
        ];
        if let DataSource::Phantom { config: p, seed } = &self.data {
            let i = |x: &Intensity| format!("{},{},{},{}", x.mean, x.sd, x.min, x.max);
            if let Some(s) = seed {
                kv.push(("phantom.seed", s.to_string()));
            }
            kv.extend([
                ("phantom.side", p.side.to_string()),
                ("phantom.size", p.size.to_string()),
                ("phantom.tcfa_fraction", p.tcfa_fraction.to_string()),
                ("phantom.lumen_radius", format!("{},{}", p.lumen_radius.0, p.lumen_radius.1)),
                ("phantom.eem_radius", format!("{},{}", p.eem_radius.0, p.eem_radius.1)),
                ("phantom.center_jitter", p.center_jitter.to_string()),
                ("phantom.wobble", p.wobble.to_string()),
                ("phantom.lumen", i(&p.lumen)),
                ("phantom.plaque", i(&p.plaque)),
                ("phantom.adventitia", i(&p.adventitia)),
                ("phantom.signature", p.signature.to_string()),
                ("phantom.dark_probability", p.dark_probability.to_string()),
                ("phantom.burden_inflation", p.burden_inflation.to_string()),
                ("phantom.bright_probability", p.bright_probability.to_string()),
                ("phantom.spread", p.spread.to_string()),
            ]);
        }
        let f = &self.fnn;
        let c = &self.cnn;
        kv.extend([
            ("split.train_fraction", self.train_fraction.to_string()),
            ("sweep", self.sweep.to_string()),
            ("sweep.n", join(&self.sweep_ns)),
            ("top_n", self.top_n.to_string()),
            ("fnn.hidden", join(&f.hidden)),
            ("fnn.learning_rate", f.learning_rate.to_string()),
            ("fnn.lr_decay", f.lr_decay.to_string()),
            ("fnn.batch_size", f.batch_size.to_string()),
            ("fnn.epochs", f.epochs.to_string()),
            ("fnn.l2", f.l2.to_string()),
            ("fnn.rho", f.rho.to_string()),
            ("fnn.epsilon", f.epsilon.to_string()),
            ("rf.trees", self.rf_trees.to_string()),
            ("cnn.blocks", c.blocks.iter().map(|b| format!("{}x{}", b.convs, b.channels)).collect::<Vec<_>>().join(",")),
            ("cnn.dense", c.dense.to_string()),
            ("cnn.gamma", c.gamma.to_string()),
            ("cnn.dropout", c.dropout.to_string()),
            ("cnn.batch_size", c.batch_size.to_string()),
            ("cnn.learning_rate", c.learning_rate.to_string()),
            ("cnn.epochs", c.epochs.to_string()),
            ("cnn.patience", c.patience.to_string()),
            ("cnn.bn_momentum", c.bn_momentum.to_string()),
            ("cnn.bn_epsilon", c.bn_epsilon.to_string()),
            ("cnn.rho", c.rho.to_string()),
            ("cnn.epsilon", c.epsilon.to_string()),
            ("cnn.validation_fraction", self.cnn_validation.to_string()),
        ]);
        kv.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Cross-field checks that do not need the data.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(format!("split.train_fraction {} must lie in (0, 1)", self.train_fraction));
        }
        if !(self.cnn_validation > 0.0 && self.cnn_validation < 1.0) {
            return Err(format!("cnn.validation_fraction {} must lie in (0, 1)", self.cnn_validation));
        }
        if self.top_n == 0 || self.top_n > FEATURE_COUNT {
            return Err(format!("top_n must lie in 1..={FEATURE_COUNT}, got {}", self.top_n));
        }
        if self.rf_trees == 0 {
            return Err("rf.trees must be at least 1".into());
        }
        if self.classifier == Classifier::Cnn && self.sweep {
            return Err("the feature sweep does not apply to the CNN".into());
        }
        if let DataSource::Phantom { config, .. } = &self.data {
            config.validate().map_err(|e| e.to_string())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(
            "seed = 7\nclassifier = rf # forest\n\nsweep = yes\nsweep.n = 1-3,10\nphantom.size = 220\nphantom.seed = 3\n\
             phantom.lumen = 50,10,31,255\ncnn.blocks = 1x8,1x16\nfnn.hidden = 10,5\n",
            "t",
        )
        .unwrap();
        assert_eq!(cfg.sweep_ns, vec![1, 2, 3, 10]);
        assert_eq!(cfg.phantom_seed(), Some(3));
        let mut back = ExperimentConfig::default();
        back.apply_text(&cfg.echo(), "echo").unwrap();
        assert_eq!(back, cfg);

        let corpus = ExperimentConfig { data: DataSource::Corpus("frames".into()), ..ExperimentConfig::default() };
        let mut back = ExperimentConfig::default();
        back.apply_text(&corpus.echo(), "echo").unwrap();
        assert_eq!(back, corpus);
    }

    #[test]
    fn errors_name_the_line() {
        let mut cfg = ExperimentConfig::default();
        let e = cfg.apply_text("seed = 1\nbogus = 2\n", "f.cfg").unwrap_err();
        assert_eq!((e.line, e.origin.as_str()), (2, "f.cfg"));
        assert!(cfg.apply_text("seed 1", "f").is_err());
        assert!(cfg.apply_text("classifier = svm", "f").is_err());
        assert!(cfg.apply_text("sweep.n = 0", "f").is_err());
        assert!(cfg.apply_text("data = somewhere\nphantom.size = 3", "f").is_err());
    }

    #[test]
    fn phantom_seed_follows_master() {
        let cfg = ExperimentConfig { seed: 9, ..ExperimentConfig::default() };
        assert_eq!(cfg.phantom_seed(), Some(9));
        assert!(cfg.validate().is_ok());
        assert!(ExperimentConfig { classifier: Classifier::Cnn, sweep: true, ..cfg }.validate().is_err());
    }
}
