//! VGG-style convolutional classifier for whole frames.
//!
//! Each block stacks `convs` layers of 3x3 same-padded convolution, batch
//! normalization and ELU, then halves the spatial size with 2x2 max pooling.
//! The flattened feature map feeds an optional ELU hidden layer with
//! inverted dropout and a two-way softmax head trained with cross-entropy.
//!
//! Convolutions carry no bias of their own: the batch-norm shift that follows
//! each one plays that role.

pub mod layers;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifiers::fnn::{DenseLayer, RmsProp};
use crate::error::{Error, Result};
use crate::image::{Class, GreyImage, LabeledSample};
use crate::linalg::gemm;
use crate::math;
use crate::rng::{self, SeededRng};

pub use layers::elu;
use layers::{
    batch_norm_backward, batch_norm_normalize, conv3x3_backward, conv3x3_forward, dropout_mask, elu_grad_from_output,
    max_pool2, max_pool2_backward,
};

/// Learning-rate multiplier applied every [`DECAY_STEPS`] optimizer steps.
pub const DECAY_RATE: f64 = 0.95;
pub const DECAY_STEPS: u64 = 1000;

/// `lr0 * 0.95^floor(step / 1000)`.
pub fn lr_at_step(lr0: f64, step: u64) -> f64 {
    lr0 * math::powu(DECAY_RATE, step / DECAY_STEPS)
}

/// One VGG-style block: `convs` convolutions of `channels` output channels
/// followed by a 2x2 max pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub convs: usize,
    pub channels: usize,
}

impl ConvBlock {
    pub const fn new(convs: usize, channels: usize) -> Self {
        Self { convs, channels }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    /// Input side length; must be divisible by `2^blocks`.
    pub side: usize,
    pub blocks: Vec<ConvBlock>,
    /// Width of the hidden fully connected layer; 0 connects the feature map
    /// straight to the softmax head.
    pub dense: usize,
    /// ELU gamma.
    pub gamma: f64,
    /// Dropout probability on the fully connected input of the head.
    pub dropout: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epoch budget.
    pub epochs: usize,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    /// Running-statistics momentum of batch normalization.
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for CnnConfig {
    /// The desk-scale plan: four blocks of two convolutions on 64x64 frames.
    fn default() -> Self {
        Self {
            side: 64,
            blocks: vec![ConvBlock::new(2, 16), ConvBlock::new(2, 32), ConvBlock::new(2, 64), ConvBlock::new(2, 128)],
            dense: 64,
            gamma: 1.0,
            dropout: 0.5,
            batch_size: 32,
            learning_rate: 0.001,
            epochs: 50,
            patience: 3,
            bn_momentum: 0.9,
            bn_epsilon: 1e-5,
            rho: 0.9,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() || self.blocks.iter().any(|b| b.convs == 0 || b.channels == 0) {
            return Err(Error::InvalidArgument("every block needs at least one convolution and channel".into()));
        }
        let factor = 1usize.checked_shl(self.blocks.len() as u32).unwrap_or(0);
        if factor == 0 || self.side == 0 || !self.side.is_multiple_of(factor) {
            return Err(Error::InvalidArgument(format!(
                "side {} is not divisible by 2^{}",
                self.side,
                self.blocks.len()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.gamma <= 0.0 || self.learning_rate <= 0.0 || self.bn_epsilon <= 0.0 {
            return Err(Error::InvalidArgument("gamma, learning rate and epsilon must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidArgument("momentum and rho must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Side length of the final feature map, `side / 2^blocks`.
    pub fn feature_side(&self) -> usize {
        self.side >> self.blocks.len()
    }

    /// Length of the flattened final feature map.
    pub fn flat_len(&self) -> usize {
        let fs = self.feature_side();
        self.blocks.last().map_or(0, |b| b.channels) * fs * fs
    }
}

/// Convolution kernel plus the batch normalization that follows it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub cin: usize,
    pub cout: usize,
    /// `cout x (cin * 9)`, row-major.
    pub weights: Vec<f64>,
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnModel {
    pub side: usize,
    pub blocks: Vec<ConvBlock>,
    pub gamma: f64,
    pub bn_epsilon: f64,
    pub convs: Vec<ConvLayer>,
    pub hidden: Option<DenseLayer>,
    pub head: DenseLayer,
}

fn glorot(rng: &mut SeededRng, fan_in: usize, fan_out: usize, len: usize) -> Vec<f64> {
    let limit = math::sqrt(6.0 / (fan_in + fan_out) as f64);
    (0..len).map(|_| rng.random_range(-limit..limit)).collect()
}

fn dense_forward(layer: &DenseLayer, x: &[f64], batch: usize) -> Vec<f64> {
    let mut z = vec![0.0; batch * layer.outputs];
    gemm(batch, layer.inputs, layer.outputs, x, false, &layer.weights, false, 0.0, &mut z);
    for row in z.chunks_mut(layer.outputs) {
        for (v, b) in row.iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    z
}

/// Returns `(d_input, d_weights, d_bias)`.
fn dense_backward(layer: &DenseLayer, x: &[f64], dz: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dw = vec![0.0; layer.inputs * layer.outputs];
    gemm(layer.inputs, batch, layer.outputs, x, true, dz, false, 0.0, &mut dw);
    let mut db = vec![0.0; layer.outputs];
    for row in dz.chunks(layer.outputs) {
        for (d, g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    let mut dx = vec![0.0; batch * layer.inputs];
    gemm(batch, layer.outputs, layer.inputs, dz, false, &layer.weights, true, 0.0, &mut dx);
    (dx, dw, db)
}

fn softmax_rows(z: &mut [f64]) {
    for row in z.chunks_mut(2) {
        let m = row[0].max(row[1]);
        let (a, b) = (math::exp(row[0] - m), math::exp(row[1] - m));
        row[0] = a / (a + b);
        row[1] = b / (a + b);
    }
}

fn cross_entropy(probs: &[f64], classes: &[Class]) -> f64 {
    let sum: f64 = classes
        .iter()
        .enumerate()
        .map(|(i, c)| -math::ln(probs[i * 2 + usize::from(c.bit())].max(f64::MIN_POSITIVE)))
        .sum();
    sum / classes.len() as f64
}

/// Everything the backward pass needs from a training-mode forward pass.
struct Trace {
    batch: usize,
    conv_in: Vec<Vec<f64>>,
    xhat: Vec<Vec<f64>>,
    inv_std: Vec<Vec<f64>>,
    batch_mean: Vec<Vec<f64>>,
    batch_var: Vec<Vec<f64>>,
    /// Values per channel behind each batch statistic.
    bn_count: Vec<usize>,
    act: Vec<Vec<f64>>,
    pool_arg: Vec<Vec<u32>>,
    flat: Vec<f64>,
    hidden_act: Vec<f64>,
    drop: Vec<f64>,
    head_in: Vec<f64>,
    probs: Vec<f64>,
}

/// Gradients in the order of [`CnnModel::params_mut`].
#[derive(Debug, Clone, PartialEq)]
pub struct CnnGradients(pub Vec<Vec<f64>>);

/// Preprocessed frames: pixels scaled to `[0, 1]`, one plane per image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    side: usize,
    pixels: Vec<f64>,
    classes: Vec<Class>,
}

impl ImageSet {
    pub fn from_images<'a, I>(images: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a GreyImage, Class)>,
    {
        let mut side = None;
        let mut pixels = Vec::new();
        let mut classes = Vec::new();
        for (img, class) in images {
            let s = *side.get_or_insert(img.side());
            if img.side() != s {
                return Err(Error::DimensionMismatch(format!("image side {} differs from {s}", img.side())));
            }
            pixels.extend(img.pixels().iter().map(|&p| f64::from(p) / 255.0));
            classes.push(class);
        }
        Ok(Self { side: side.unwrap_or(0), pixels, classes })
    }

    pub fn from_samples(samples: &[LabeledSample]) -> Result<Self> {
        Self::from_images(samples.iter().map(|s| (&s.image, s.class)))
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[Class] {
        &self.classes
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.side * self.side;
        &self.pixels[i * n..(i + 1) * n]
    }

    fn gather(&self, indices: &[usize]) -> (Vec<f64>, Vec<Class>) {
        let mut x = Vec::with_capacity(indices.len() * self.side * self.side);
        for &i in indices {
            x.extend_from_slice(self.image(i));
        }
        (x, indices.iter().map(|&i| self.classes[i]).collect())
    }
}

impl CnnModel {
    /// Glorot-uniform kernels and dense weights, unit batch-norm scale, zero
    /// shifts and biases, running statistics at (0, 1).
    pub fn init(cfg: &CnnConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng::seeded(seed);
        let mut convs = Vec::new();
        let mut cin = 1;
        for block in &cfg.blocks {
            for _ in 0..block.convs {
                let cout = block.channels;
                convs.push(ConvLayer {
                    cin,
                    cout,
                    weights: glorot(&mut rng, cin * 9, cout * 9, cout * cin * 9),
                    scale: vec![1.0; cout],
                    shift: vec![0.0; cout],
                    running_mean: vec![0.0; cout],
                    running_var: vec![1.0; cout],
                });
                cin = cout;
            }
        }
        let flat = cfg.flat_len();
        let mut dense = |inputs: usize, outputs: usize| DenseLayer {
            inputs,
            outputs,
            weights: glorot(&mut rng, inputs, outputs, inputs * outputs),
            bias: vec![0.0; outputs],
        };
        let (hidden, head) = if cfg.dense > 0 {
            let h = dense(flat, cfg.dense);
            (Some(h), dense(cfg.dense, 2))
        } else {
            (None, dense(flat, 2))
        };
        Ok(Self { side: cfg.side, blocks: cfg.blocks.clone(), gamma: cfg.gamma, bn_epsilon: cfg.bn_epsilon, convs, hidden, head })
    }

    /// `(channels, side)` of the final feature map, following the layer
    /// stack: convolutions keep the spatial size, pools halve it.
    pub fn feature_map_shape(&self) -> (usize, usize) {
        let mut side = self.side;
        let mut channels = 1;
        let mut l = 0;
        for block in &self.blocks {
            for _ in 0..block.convs {
                channels = self.convs[l].cout;
                l += 1;
            }
            side /= 2;
        }
        (channels, side)
    }

    /// Feature map of a batch in inference mode, before flattening.
    fn features_infer(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut h = self.side;
        let mut l = 0;
        for block in &self.blocks {
            for _ in 0..block.convs {
                let layer = &self.convs[l];
                let hw = h * h;
                let mut z = conv3x3_forward(&cur, batch, layer.cin, layer.cout, h, h, &layer.weights);
                for b in 0..batch {
                    for c in 0..layer.cout {
                        let k = layer.scale[c] / math::sqrt(layer.running_var[c] + self.bn_epsilon);
                        let off = layer.shift[c] - k * layer.running_mean[c];
                        for v in &mut z[(b * layer.cout + c) * hw..(b * layer.cout + c + 1) * hw] {
                            *v = elu(k * *v + off, self.gamma);
                        }
                    }
                }
                cur = z;
                l += 1;
            }
            let planes = batch * self.convs[l - 1].cout;
            cur = max_pool2(&cur, planes, h, h).0;
            h /= 2;
        }
        cur
    }

    /// Softmax outputs `[p_normal, p_tcfa]` per image of a batch, inference mode.
    fn forward_infer(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut a = self.features_infer(x, batch);
        if let Some(hidden) = &self.hidden {
            a = dense_forward(hidden, &a, batch);
            for v in &mut a {
                *v = elu(*v, self.gamma);
            }
        }
        let mut z = dense_forward(&self.head, &a, batch);
        softmax_rows(&mut z);
        z
    }

    fn forward_train(&self, x: &[f64], batch: usize, dropout: f64, rng: &mut SeededRng) -> Trace {
        let n_conv = self.convs.len();
        let mut t = Trace {
            batch,
            conv_in: Vec::with_capacity(n_conv),
            xhat: Vec::with_capacity(n_conv),
            inv_std: Vec::with_capacity(n_conv),
            batch_mean: Vec::with_capacity(n_conv),
            batch_var: Vec::with_capacity(n_conv),
            bn_count: Vec::with_capacity(n_conv),
            act: Vec::with_capacity(n_conv),
            pool_arg: Vec::with_capacity(self.blocks.len()),
            flat: Vec::new(),
            hidden_act: Vec::new(),
            drop: Vec::new(),
            head_in: Vec::new(),
            probs: Vec::new(),
        };
        let mut cur = x.to_vec();
        let mut h = self.side;
        let mut l = 0;
        for block in &self.blocks {
            for _ in 0..block.convs {
                let layer = &self.convs[l];
                let hw = h * h;
                let z = conv3x3_forward(&cur, batch, layer.cin, layer.cout, h, h, &layer.weights);
                let (xhat, inv_std, mean, var) = batch_norm_normalize(&z, batch, layer.cout, hw, self.bn_epsilon);
                let mut y = xhat.clone();
                for b in 0..batch {
                    for c in 0..layer.cout {
                        for v in &mut y[(b * layer.cout + c) * hw..(b * layer.cout + c + 1) * hw] {
                            *v = elu(layer.scale[c] * *v + layer.shift[c], self.gamma);
                        }
                    }
                }
                t.conv_in.push(cur);
                t.xhat.push(xhat);
                t.inv_std.push(inv_std);
                t.batch_mean.push(mean);
                t.batch_var.push(var);
                t.bn_count.push(batch * hw);
                cur = y.clone();
                t.act.push(y);
                l += 1;
            }
            let (pooled, arg) = max_pool2(&cur, batch * self.convs[l - 1].cout, h, h);
            t.pool_arg.push(arg);
            cur = pooled;
            h /= 2;
        }
        t.flat = cur;
        let mut a = t.flat.clone();
        if let Some(hidden) = &self.hidden {
            a = dense_forward(hidden, &a, batch);
            for v in &mut a {
                *v = elu(*v, self.gamma);
            }
            t.hidden_act = a.clone();
        }
        t.drop = dropout_mask(a.len(), dropout, rng);
        for (v, m) in a.iter_mut().zip(&t.drop) {
            *v *= m;
        }
        let mut z = dense_forward(&self.head, &a, batch);
        t.head_in = a;
        softmax_rows(&mut z);
        t.probs = z;
        t
    }

    fn backward(&self, t: &Trace, classes: &[Class]) -> CnnGradients {
        let batch = t.batch;
        let mut dz = t.probs.clone();
        for (i, c) in classes.iter().enumerate() {
            dz[i * 2 + usize::from(c.bit())] -= 1.0;
        }
        for v in &mut dz {
            *v /= batch as f64;
        }
        let (mut d, head_w, head_b) = dense_backward(&self.head, &t.head_in, &dz, batch);
        for (v, m) in d.iter_mut().zip(&t.drop) {
            *v *= m;
        }
        let mut dense_grads = Vec::new();
        if let Some(hidden) = &self.hidden {
            for (v, y) in d.iter_mut().zip(&t.hidden_act) {
                *v *= elu_grad_from_output(*y, self.gamma);
            }
            let (dx, w, b) = dense_backward(hidden, &t.flat, &d, batch);
            d = dx;
            dense_grads.push(w);
            dense_grads.push(b);
        }
        dense_grads.push(head_w);
        dense_grads.push(head_b);

        let mut conv_grads: Vec<[Vec<f64>; 3]> = Vec::with_capacity(self.convs.len());
        let mut l = self.convs.len();
        let mut h = self.side >> self.blocks.len();
        for (bi, block) in self.blocks.iter().enumerate().rev() {
            h *= 2;
            let hw = h * h;
            d = max_pool2_backward(&d, &t.pool_arg[bi], batch * self.convs[l - 1].cout, h, h);
            for _ in 0..block.convs {
                l -= 1;
                let layer = &self.convs[l];
                for (v, y) in d.iter_mut().zip(&t.act[l]) {
                    *v *= elu_grad_from_output(*y, self.gamma);
                }
                let (dn, d_scale, d_shift) =
                    batch_norm_backward(&d, &t.xhat[l], &t.inv_std[l], &layer.scale, batch, layer.cout, hw);
                let (d_in, d_w) =
                    conv3x3_backward(&t.conv_in[l], &dn, batch, layer.cin, layer.cout, h, h, &layer.weights, l > 0);
                conv_grads.push([d_w, d_scale, d_shift]);
                d = d_in;
            }
        }
        conv_grads.reverse();
        let mut all: Vec<Vec<f64>> = conv_grads.into_iter().flatten().collect();
        all.extend(dense_grads);
        CnnGradients(all)
    }

    /// Trainable parameters: per convolution its kernel, batch-norm scale and
    /// shift; then hidden weights and bias (if any); then head weights and bias.
    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weights);
            out.push(&mut c.scale);
            out.push(&mut c.shift);
        }
        if let Some(h) = &mut self.hidden {
            out.push(&mut h.weights);
            out.push(&mut h.bias);
        }
        out.push(&mut self.head.weights);
        out.push(&mut self.head.bias);
        out
    }

    fn check_batch(&self, x: &[f64], batch: usize) -> Result<()> {
        if x.len() != batch * self.side * self.side {
            return Err(Error::DimensionMismatch(format!(
                "expected {batch} images of {}x{} pixels, got {} values",
                self.side,
                self.side,
                x.len()
            )));
        }
        Ok(())
    }

    /// Training-mode cross-entropy (batch statistics, dropout from `rng`) and
    /// its gradients. Running statistics are left untouched.
    pub fn loss_and_gradients(
        &self,
        x: &[f64],
        classes: &[Class],
        dropout: f64,
        rng: &mut SeededRng,
    ) -> Result<(f64, CnnGradients)> {
        self.check_batch(x, classes.len())?;
        let t = self.forward_train(x, classes.len(), dropout, rng);
        Ok((cross_entropy(&t.probs, classes), self.backward(&t, classes)))
    }

    /// Training-mode loss only; see [`CnnModel::loss_and_gradients`].
    pub fn training_loss(&self, x: &[f64], classes: &[Class], dropout: f64, rng: &mut SeededRng) -> Result<f64> {
        self.check_batch(x, classes.len())?;
        let t = self.forward_train(x, classes.len(), dropout, rng);
        Ok(cross_entropy(&t.probs, classes))
    }

    /// Per-channel normalized pre-scale activations of convolution `layer`
    /// in training mode, for a batch of `[0, 1]`-scaled images.
    pub fn normalized_activations(&self, x: &[f64], batch: usize, layer: usize) -> Result<Vec<f64>> {
        self.check_batch(x, batch)?;
        if layer >= self.convs.len() {
            return Err(Error::InvalidArgument(format!("no convolution layer {layer}")));
        }
        let t = self.forward_train(x, batch, 0.0, &mut rng::seeded(0));
        Ok(t.xhat.into_iter().nth(layer).unwrap_or_default())
    }

    /// Inference-mode `[p_normal, p_tcfa]` for a batch of `[0, 1]`-scaled images.
    pub fn predict_batch_scaled(&self, x: &[f64], batch: usize) -> Result<Vec<[f64; 2]>> {
        self.check_batch(x, batch)?;
        Ok(self.forward_infer(x, batch).chunks(2).map(|p| [p[0], p[1]]).collect())
    }

    pub fn predict_pair(&self, image: &GreyImage) -> Result<[f64; 2]> {
        if image.side() != self.side {
            return Err(Error::DimensionMismatch(format!("model expects side {}, got {}", self.side, image.side())));
        }
        let x: Vec<f64> = image.pixels().iter().map(|&p| f64::from(p) / 255.0).collect();
        Ok(self.predict_batch_scaled(&x, 1)?[0])
    }

    /// TCFA scores of every image in the set, evaluated in batches.
    pub fn score_set(&self, set: &ImageSet) -> Result<Vec<f64>> {
        if set.is_empty() {
            return Ok(Vec::new());
        }
        if set.side() != self.side {
            return Err(Error::DimensionMismatch(format!("model expects side {}, got {}", self.side, set.side())));
        }
        let idx: Vec<usize> = (0..set.len()).collect();
        let mut out = Vec::with_capacity(set.len());
        for chunk in idx.chunks(64) {
            let (x, _) = set.gather(chunk);
            out.extend(self.forward_infer(&x, chunk.len()).chunks(2).map(|p| p[1]));
        }
        Ok(out)
    }

    /// Inference-mode mean cross-entropy and accuracy (argmax) on a set.
    pub fn evaluate_set(&self, set: &ImageSet) -> Result<(f64, f64)> {
        if set.is_empty() {
            return Err(Error::Empty("evaluation set is empty".into()));
        }
        let scores = self.score_set(set)?;
        let mut loss = 0.0;
        let mut correct = 0usize;
        for (&p, &c) in scores.iter().zip(set.classes()) {
            let q = if c.is_positive() { p } else { 1.0 - p };
            loss -= math::ln(q.max(f64::MIN_POSITIVE));
            if (p > 0.5) == c.is_positive() {
                correct += 1;
            }
        }
        let n = set.len() as f64;
        Ok((loss / n, correct as f64 / n))
    }
}

/// Probability of TCFA for one frame, in inference mode.
pub fn cnn_predict_proba(model: &CnnModel, image: &GreyImage) -> Result<f64> {
    Ok(model.predict_pair(image)?[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StopReason {
    Patience,
    Budget,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::Patience => "PATIENCE",
            StopReason::Budget => "BUDGET",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean training-mode batch loss over the epoch.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learning rate of the last step of the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub stop: StopReason,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
}

/// Stops once the monitored loss has not strictly improved for `patience`
/// consecutive epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: 0, wait: 0 }
    }

    /// Records the loss of `epoch`. Returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> (bool, bool) {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.wait = 0;
            (true, false)
        } else {
            self.wait += 1;
            (false, self.wait >= self.patience)
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Mini-batch RMSprop training state, advanced one epoch at a time.
pub struct CnnTrainer<'a> {
    cfg: CnnConfig,
    model: CnnModel,
    train: &'a ImageSet,
    opt: Vec<RmsProp>,
    step: u64,
    order: Vec<usize>,
    shuffle: SeededRng,
    dropout: SeededRng,
}

impl<'a> CnnTrainer<'a> {
    pub fn new(train: &'a ImageSet, cfg: &CnnConfig) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::Empty("CNN training set is empty".into()));
        }
        if train.side() != cfg.side {
            return Err(Error::DimensionMismatch(format!("config side {} but images are {}", cfg.side, train.side())));
        }
        let mut model = CnnModel::init(cfg, rng::derive_seed(cfg.seed, "cnn/init"))?;
        let opt = model.params_mut().iter().map(|p| RmsProp::new(p.len())).collect();
        Ok(Self {
            cfg: cfg.clone(),
            model,
            train,
            opt,
            step: 0,
            order: (0..train.len()).collect(),
            shuffle: rng::seeded(rng::derive_seed(cfg.seed, "cnn/shuffle")),
            dropout: rng::seeded(rng::derive_seed(cfg.seed, "cnn/dropout")),
        })
    }

    pub fn model(&self) -> &CnnModel {
        &self.model
    }

    pub fn into_model(self) -> CnnModel {
        self.model
    }

    /// Optimizer steps taken so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One pass over the shuffled training set; returns the mean batch loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        self.order.shuffle(&mut self.shuffle);
        let momentum = self.cfg.bn_momentum;
        let mut total = 0.0;
        let mut batches = 0usize;
        let order = core::mem::take(&mut self.order);
        for chunk in order.chunks(self.cfg.batch_size) {
            let (x, classes) = self.train.gather(chunk);
            let t = self.model.forward_train(&x, chunk.len(), self.cfg.dropout, &mut self.dropout);
            let loss = cross_entropy(&t.probs, &classes);
            if !loss.is_finite() {
                self.order = order;
                return Err(Error::NonFiniteLoss(format!("CNN batch loss {loss} at step {}", self.step)));
            }
            let grads = self.model.backward(&t, &classes);
            let lr = lr_at_step(self.cfg.learning_rate, self.step);
            let (rho, eps) = (self.cfg.rho, self.cfg.epsilon);
            for ((p, g), o) in self.model.params_mut().into_iter().zip(&grads.0).zip(&mut self.opt) {
                o.step(p, g, lr, rho, eps);
            }
            for (l, layer) in self.model.convs.iter_mut().enumerate() {
                let n = t.bn_count[l] as f64;
                let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                for c in 0..layer.cout {
                    layer.running_mean[c] = momentum * layer.running_mean[c] + (1.0 - momentum) * t.batch_mean[l][c];
                    layer.running_var[c] =
                        momentum * layer.running_var[c] + (1.0 - momentum) * t.batch_var[l][c] * unbias;
                }
            }
            self.step += 1;
            total += loss;
            batches += 1;
        }
        self.order = order;
        Ok(total / batches as f64)
    }
}

/// Trains with early stopping on validation loss and returns the weights of
/// the best validation epoch.
pub fn cnn_train(train: &ImageSet, validation: &ImageSet, cfg: &CnnConfig) -> Result<(CnnModel, TrainLog)> {
    if validation.is_empty() {
        return Err(Error::Empty("CNN validation set is empty".into()));
    }
    let mut trainer = CnnTrainer::new(train, cfg)?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = trainer.model().clone();
    let mut epochs = Vec::new();
    let mut stop = StopReason::Budget;
    for epoch in 1..=cfg.epochs {
        let train_loss = trainer.run_epoch()?;
        let (val_loss, val_acc) = trainer.model().evaluate_set(validation)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss(format!("CNN validation loss {val_loss} at epoch {epoch}")));
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_acc,
            lr: lr_at_step(cfg.learning_rate, trainer.steps().saturating_sub(1)),
        });
        let (improved, halt) = stopper.observe(epoch, val_loss);
        if improved {
            best = trainer.model().clone();
        }
        if halt {
            stop = StopReason::Patience;
            break;
        }
    }
    Ok((best, TrainLog { epochs, stop, best_epoch: stopper.best_epoch() }))
}
