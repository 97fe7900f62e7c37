//! Feed-forward network: ReLU hidden layers, two-way softmax head,
//! cross-entropy with L2 weight penalty, mini-batch RMSprop with a per-epoch
//! exponential learning-rate decay.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::image::Class;
use crate::linalg::gemm;
use crate::math;
use crate::rng;

/// Hidden layer widths of the tuned network.
pub const HIDDEN_LAYERS: [usize; 5] = [50, 100, 200, 80, 40];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnnConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate after every epoch.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// L2 penalty `alpha / (2 * batch) * sum(w^2)` on weights (not biases).
    pub l2: f64,
    /// RMSprop squared-gradient decay.
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for FnnConfig {
    fn default() -> Self {
        Self {
            hidden: HIDDEN_LAYERS.to_vec(),
            learning_rate: 0.001,
            lr_decay: 0.95,
            batch_size: 100,
            epochs: 60,
            l2: 1e-4,
            rho: 0.9,
            epsilon: 1e-8,
        }
    }
}

impl FnnConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0)
            || !(self.lr_decay.is_finite() && self.lr_decay > 0.0)
            || self.batch_size == 0
        {
            return Err(Error::InvalidArgument(format!(
                "learning rate, decay and batch size must be positive (got {}, {}, {})",
                self.learning_rate, self.lr_decay, self.batch_size
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden layers need at least one unit".into()));
        }
        Ok(())
    }
}

/// Fully connected layer; `weights` is `inputs x outputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnnModel {
    pub layers: Vec<DenseLayer>,
}

/// Gradients laid out like [`FnnModel::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct FnnGradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

fn softmax_row(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = math::exp(*v - max);
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

impl FnnModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(inputs: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let mut sizes = vec![inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(2);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = math::sqrt(6.0 / (fan_in + fan_out) as f64);
                DenseLayer {
                    inputs: fan_in,
                    outputs: fan_out,
                    weights: (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect(),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Self { layers }
    }

    pub fn n_features(&self) -> usize {
        self.layers[0].inputs
    }

    /// Layer widths from input to output.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.layers.iter().map(|l| l.inputs).collect();
        s.push(2);
        s
    }

    /// Activations of every layer for a batch; the last entry holds softmax outputs.
    fn forward(&self, x: &[f64], batch: usize) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(batch * layer.outputs);
            for _ in 0..batch {
                z.extend_from_slice(&layer.bias);
            }
            gemm(batch, layer.inputs, layer.outputs, acts.last().unwrap(), false, &layer.weights, false, 1.0, &mut z);
            if li + 1 < self.layers.len() {
                for v in z.iter_mut() {
                    *v = v.max(0.0);
                }
            } else {
                z.chunks_mut(2).for_each(softmax_row);
            }
            acts.push(z);
        }
        acts
    }

    /// `[p(normal), p(tcfa)]` for one feature row.
    pub fn predict_pair(&self, x: &[f64]) -> Result<[f64; 2]> {
        self.check_dim(x.len())?;
        let out = self.forward(x, 1).pop().unwrap();
        Ok([out[0], out[1]])
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(self.predict_pair(x)?[1])
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.n_features() {
            return Err(Error::DimensionMismatch(format!("network expects {} inputs, got {got}", self.n_features())));
        }
        Ok(())
    }

    fn weight_sq(&self) -> f64 {
        self.layers.iter().flat_map(|l| &l.weights).map(|w| w * w).sum()
    }

    /// Mean cross-entropy plus `l2 / (2 * batch) * sum(w^2)`.
    pub fn loss(&self, x: &[f64], classes: &[Class], l2: f64) -> Result<f64> {
        let batch = classes.len();
        self.check_dim(x.len() / batch.max(1))?;
        let probs = self.forward(x, batch).pop().unwrap();
        Ok(cross_entropy(&probs, classes) + 0.5 * l2 * self.weight_sq() / batch as f64)
    }

    /// Loss and its gradient for a batch.
    pub fn gradients(&self, x: &[f64], classes: &[Class], l2: f64) -> (f64, FnnGradients) {
        let batch = classes.len();
        let acts = self.forward(x, batch);
        let probs = acts.last().unwrap();
        let loss = cross_entropy(probs, classes) + 0.5 * l2 * self.weight_sq() / batch as f64;

        // d loss / d logits = (p - onehot) / batch
        let mut delta: Vec<f64> = probs.clone();
        for (b, c) in classes.iter().enumerate() {
            delta[b * 2 + usize::from(c.bit())] -= 1.0;
        }
        let inv = 1.0 / batch as f64;
        delta.iter_mut().for_each(|d| *d *= inv);

        let n = self.layers.len();
        let mut gw = vec![Vec::new(); n];
        let mut gb = vec![Vec::new(); n];
        for li in (0..n).rev() {
            let layer = &self.layers[li];
            let input = &acts[li];
            let mut dw = vec![0.0; layer.inputs * layer.outputs];
            gemm(layer.inputs, batch, layer.outputs, input, true, &delta, false, 0.0, &mut dw);
            for (d, w) in dw.iter_mut().zip(&layer.weights) {
                *d += l2 * w * inv;
            }
            let mut db = vec![0.0; layer.outputs];
            for row in delta.chunks(layer.outputs) {
                for (a, &d) in db.iter_mut().zip(row) {
                    *a += d;
                }
            }
            if li > 0 {
                let mut dx = vec![0.0; batch * layer.inputs];
                gemm(batch, layer.outputs, layer.inputs, &delta, false, &layer.weights, true, 0.0, &mut dx);
                for (d, &a) in dx.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
                delta = dx;
            }
            gw[li] = dw;
            gb[li] = db;
        }
        (loss, FnnGradients { weights: gw, bias: gb })
    }
}

fn cross_entropy(probs: &[f64], classes: &[Class]) -> f64 {
    let sum: f64 = classes
        .iter()
        .enumerate()
        .map(|(b, c)| -math::ln(probs[b * 2 + usize::from(c.bit())].max(1e-300)))
        .sum();
    sum / classes.len() as f64
}

/// RMSprop state for one parameter vector.
#[derive(Debug, Clone)]
pub(crate) struct RmsProp {
    cache: Vec<f64>,
}

impl RmsProp {
    pub(crate) fn new(len: usize) -> Self {
        Self { cache: vec![0.0; len] }
    }

    pub(crate) fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, rho: f64, eps: f64) {
        for ((p, &g), c) in params.iter_mut().zip(grads).zip(self.cache.iter_mut()) {
            *c = rho * *c + (1.0 - rho) * g * g;
            *p -= lr * g / (math::sqrt(*c) + eps);
        }
    }
}

/// Flattened rows and classes of a matrix.
pub(crate) fn flatten(m: &FeatureMatrix) -> (Vec<f64>, Vec<Class>) {
    let mut x = Vec::with_capacity(m.len() * m.n_features());
    for r in m.rows() {
        x.extend_from_slice(&r.values);
    }
    (x, m.classes())
}

pub fn fnn_train(train: &FeatureMatrix, cfg: &FnnConfig, seed: u64) -> Result<FnnModel> {
    fnn_train_logged(train, cfg, seed).map(|(m, _)| m)
}

/// Trains and also returns the mean mini-batch loss of each epoch.
pub fn fnn_train_logged(train: &FeatureMatrix, cfg: &FnnConfig, seed: u64) -> Result<(FnnModel, Vec<f64>)> {
    cfg.validate()?;
    let classes = train.classes();
    if !classes.contains(&Class::Normal) || !classes.contains(&Class::Tcfa) {
        return Err(Error::SingleClass("FNN training needs both classes".into()));
    }
    let dim = train.n_features();
    let (x, y) = flatten(train);
    let mut model = FnnModel::init(dim, &cfg.hidden, rng::derive_seed(seed, "fnn/init"));
    let mut shuffle = rng::seeded(rng::derive_seed(seed, "fnn/shuffle"));
    let mut opt_w: Vec<RmsProp> = model.layers.iter().map(|l| RmsProp::new(l.weights.len())).collect();
    let mut opt_b: Vec<RmsProp> = model.layers.iter().map(|l| RmsProp::new(l.bias.len())).collect();

    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut bx = Vec::new();
    let mut by = Vec::new();
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate * math::powu(cfg.lr_decay, epoch as u64);
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            bx.clear();
            by.clear();
            for &i in chunk {
                bx.extend_from_slice(&x[i * dim..(i + 1) * dim]);
                by.push(y[i]);
            }
            let (loss, g) = model.gradients(&bx, &by, cfg.l2);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(format!("FNN batch loss {loss} at epoch {epoch}")));
            }
            total += loss * chunk.len() as f64;
            for (li, layer) in model.layers.iter_mut().enumerate() {
                opt_w[li].step(&mut layer.weights, &g.weights[li], lr, cfg.rho, cfg.epsilon);
                opt_b[li].step(&mut layer.bias, &g.bias[li], lr, cfg.rho, cfg.epsilon);
            }
        }
        losses.push(total / y.len() as f64);
    }
    Ok((model, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureRow;
    use alloc::string::ToString;

    fn xor() -> FeatureMatrix {
        let pts = [([0.0, 0.0], 0u8), ([0.0, 1.0], 1), ([1.0, 0.0], 1), ([1.0, 1.0], 0)];
        FeatureMatrix::new(
            vec![1, 2],
            pts.iter()
                .enumerate()
                .map(|(i, (v, c))| FeatureRow {
                    id: i.to_string(),
                    class: Class::from_bit(*c).unwrap(),
                    values: v.to_vec(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = FnnConfig { epochs: 0, ..FnnConfig::default() };
        let m = fnn_train(&xor(), &cfg, 5).unwrap();
        assert_eq!(m, FnnModel::init(2, &HIDDEN_LAYERS, rng::derive_seed(5, "fnn/init")));
    }

    #[test]
    fn softmax_pair_sums_to_one() {
        let m = FnnModel::init(3, &[4], 1);
        for x in [[0.0, 0.0, 0.0], [1.0, -2.0, 3.0], [100.0, 50.0, -80.0]] {
            let p = m.predict_pair(&x).unwrap();
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
            assert_eq!(m.predict_proba(&x).unwrap(), m.predict_proba(&x).unwrap());
        }
        assert!(matches!(m.predict_proba(&[1.0]), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn single_class_rejected() {
        let mut rows = xor().rows().to_vec();
        rows.iter_mut().for_each(|r| r.class = Class::Normal);
        let m = FeatureMatrix::new(vec![1, 2], rows).unwrap();
        assert!(matches!(fnn_train(&m, &FnnConfig::default(), 0), Err(Error::SingleClass(_))));
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = FnnConfig { batch_size: 0, ..FnnConfig::default() };
        assert!(matches!(fnn_train(&xor(), &cfg, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = FnnConfig { epochs: 5, ..FnnConfig::default() };
        assert_eq!(fnn_train(&xor(), &cfg, 3).unwrap(), fnn_train(&xor(), &cfg, 3).unwrap());
    }
}
