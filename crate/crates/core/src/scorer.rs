//! Trainable epoch classifier.
//!
//! A two-hidden-layer tanh perceptron over the five band-power features,
//! trained with mini-batch momentum SGD on cross-entropy. Both pre-training
//! and fine-tuning run the same loop; they only differ in where the weights
//! start. After every pass over the training set the model is scored on the
//! validation set and the best macro-F1 snapshot is kept (earliest wins ties).
//! The starting weights count as the epoch-0 snapshot.
//!
//! Raw-signal inputs are Fourier-resampled to the checkpoint's rate before
//! featurization, which is how rate mismatches between datasets are handled.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, MetricSet};
use crate::seeding::rng_for;
use crate::signals::{self, Epoch};
use crate::stages::{StageLabel, NUM_STAGES};
use crate::synthgen::{ChannelId, Cohort, EpochData, FEATURE_DIM};

const INIT_SD: f64 = 0.1;
const MIN_SD: f64 = 1e-8;
pub const CHECKPOINT_FORMAT: &str = "xferbench-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("incompatible input: {0}")]
    IncompatibleInputSpec(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("invalid checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Signal(#[from] signals::SignalError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_hidden")]
    pub hidden: [usize; 2],
}

fn default_hidden() -> [usize; 2] {
    [32, 32]
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 64,
            max_epochs: 50,
            seed: 0,
            weight_decay: 0.0,
            hidden: default_hidden(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ScorerError> {
        let bad = |m: &str| Err(ScorerError::InvalidConfig(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be >= 1");
        }
        Ok(())
    }
}

/// What a checkpoint expects as input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode")]
pub enum InputSpec {
    Features { feature_dim: usize },
    Signal { rate_hz: u32 },
}

/// Labelled epochs from one (dataset, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    pub origin: ChannelId,
    pub rate_hz: u32,
    pub data: EpochData,
    pub labels: Vec<StageLabel>,
}

impl EpochSet {
    pub fn from_features(origin: ChannelId, features: Vec<[f32; FEATURE_DIM]>, labels: Vec<StageLabel>) -> Self {
        EpochSet {
            origin,
            rate_hz: 0,
            data: EpochData::Features(features),
            labels,
        }
    }

    /// Concatenate the given subjects of a cohort, in the order listed.
    pub fn from_subjects(cohort: &Cohort, subject_ids: &[String]) -> Self {
        let mut data = match cohort.gen_params.mode {
            crate::synthgen::GenMode::Features => EpochData::Features(Vec::new()),
            crate::synthgen::GenMode::Signal => EpochData::Signal(Vec::new()),
        };
        let mut labels = Vec::new();
        for id in subject_ids {
            let Some(s) = cohort.subject(id) else { continue };
            match (&mut data, &s.epochs) {
                (EpochData::Features(dst), EpochData::Features(src)) => dst.extend_from_slice(src),
                (EpochData::Signal(dst), EpochData::Signal(src)) => dst.extend(src.iter().cloned()),
                _ => continue,
            }
            labels.extend_from_slice(&s.labels);
        }
        EpochSet {
            origin: cohort.descriptor.id(),
            rate_hz: cohort.descriptor.sampling_rate_hz,
            data,
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The input spec a model trained from scratch on this set would have.
    pub fn natural_spec(&self) -> InputSpec {
        match self.data {
            EpochData::Features(_) => InputSpec::Features { feature_dim: FEATURE_DIM },
            EpochData::Signal(_) => InputSpec::Signal { rate_hz: self.rate_hz },
        }
    }

    /// Feature rows as seen by a model with `spec`.
    pub fn features_for(&self, spec: &InputSpec) -> Result<Vec<[f64; FEATURE_DIM]>, ScorerError> {
        match (spec, &self.data) {
            (InputSpec::Features { feature_dim }, EpochData::Features(v)) if *feature_dim == FEATURE_DIM => {
                Ok(v.iter().map(|f| f.map(f64::from)).collect())
            }
            (InputSpec::Signal { rate_hz }, EpochData::Signal(v)) => v
                .iter()
                .map(|samples| {
                    let epoch = Epoch::new(samples.iter().map(|&x| x as f64).collect(), self.rate_hz);
                    let epoch = if self.rate_hz == *rate_hz {
                        epoch
                    } else {
                        signals::fourier_resample(&epoch, *rate_hz)?
                    };
                    Ok(signals::bandpower_features(&epoch)?)
                })
                .collect(),
            (spec, data) => Err(ScorerError::IncompatibleInputSpec(format!(
                "model expects {spec:?}, data from {} is {:?}",
                self.origin,
                data.mode()
            ))),
        }
    }
}

/// Per-feature standardization fixed at pre-training time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Normalization {
    pub fn fit(rows: &[[f64; FEATURE_DIM]]) -> Self {
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..FEATURE_DIM).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let sd = (0..FEATURE_DIM)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd > MIN_SD {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Normalization { mean, sd }
    }

    pub fn apply(&self, row: &[f64; FEATURE_DIM]) -> [f64; FEATURE_DIM] {
        std::array::from_fn(|j| (row[j] - self.mean[j]) / self.sd[j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    /// Dataset the weights were first trained on.
    pub source: ChannelId,
    /// Dataset of the most recent fine-tuning, if any.
    pub finetuned_on: Option<ChannelId>,
    pub seed: u64,
    pub epochs_trained: usize,
    pub best_val_mf1: f64,
}

/// Dense layer, weights row-major `[n_out][n_in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Full-precision network used during training and for gradient checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Dense<f64>>,
}

impl Network {
    pub fn zeros(dims: &[usize]) -> Self {
        Network {
            layers: dims
                .windows(2)
                .map(|w| Dense {
                    n_in: w[0],
                    n_out: w[1],
                    weights: vec![0.0; w[0] * w[1]],
                    bias: vec![0.0; w[1]],
                })
                .collect(),
        }
    }

    /// Gaussian weights with standard deviation `sd`, zero biases.
    pub fn random<R: Rng>(dims: &[usize], sd: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, sd).expect("finite sd");
        let mut net = Network::zeros(dims);
        for l in &mut net.layers {
            l.weights.iter_mut().for_each(|w| *w = normal.sample(rng));
        }
        net
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].n_in];
        d.extend(self.layers.iter().map(|l| l.n_out));
        d
    }

    pub fn parameters(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    /// Activations of every layer; the last entry holds the logits.
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::new();
        self.forward_into(x, &mut acts);
        acts
    }

    /// `forward` into reusable buffers.
    fn forward_into(&self, x: &[f64], acts: &mut Vec<Vec<f64>>) {
        acts.resize_with(self.layers.len() + 1, Vec::new);
        acts[0].clear();
        acts[0].extend_from_slice(x);
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let (done, rest) = acts.split_at_mut(k + 1);
            let input = &done[k];
            let out = &mut rest[0];
            out.clear();
            out.extend((0..l.n_out).map(|o| {
                let row = &l.weights[o * l.n_in..(o + 1) * l.n_in];
                let z = l.bias[o] + row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>();
                if k == last {
                    z
                } else {
                    z.tanh()
                }
            }));
        }
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(self.forward(x).last().unwrap())
    }

    /// Mean cross-entropy over the rows.
    pub fn loss(&self, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
        xs.iter()
            .zip(ys)
            .map(|(x, &y)| -log_softmax(self.forward(x).last().unwrap())[y])
            .sum::<f64>()
            / xs.len() as f64
    }

    /// Mean cross-entropy and its gradient (same shape as `self`).
    pub fn loss_and_gradient(&self, xs: &[Vec<f64>], ys: &[usize]) -> (f64, Network) {
        let mut grad = Network::zeros(&self.dims());
        let rows: Vec<(&[f64], usize)> = xs.iter().map(|x| x.as_slice()).zip(ys.iter().copied()).collect();
        let loss = self.accumulate_gradient(&rows, &mut grad, &mut Scratch::default());
        (loss, grad)
    }

    /// Mean loss of `rows`; adds the mean gradient into `grad`.
    fn accumulate_gradient(&self, rows: &[(&[f64], usize)], grad: &mut Network, sc: &mut Scratch) -> f64 {
        let mut total = 0.0;
        let scale = 1.0 / rows.len() as f64;
        for &(x, y) in rows {
            self.forward_into(x, &mut sc.acts);
            let logits = sc.acts.last().unwrap();
            let lsm = log_softmax(logits);
            total -= lsm[y];
            // dL/dz for the output layer
            sc.delta.clear();
            sc.delta.extend(lsm.iter().map(|v| v.exp()));
            sc.delta[y] -= 1.0;
            for k in (0..self.layers.len()).rev() {
                let l = &self.layers[k];
                let g = &mut grad.layers[k];
                let input = &sc.acts[k];
                for o in 0..l.n_out {
                    let d = sc.delta[o] * scale;
                    g.bias[o] += d;
                    let row = &mut g.weights[o * l.n_in..(o + 1) * l.n_in];
                    for (gw, a) in row.iter_mut().zip(input) {
                        *gw += d * a;
                    }
                }
                if k > 0 {
                    // back through tanh of the previous layer's output
                    sc.next.clear();
                    sc.next.extend((0..l.n_in).map(|i| {
                        let s: f64 = (0..l.n_out).map(|o| l.weights[o * l.n_in + i] * sc.delta[o]).sum();
                        s * (1.0 - input[i] * input[i])
                    }));
                    std::mem::swap(&mut sc.delta, &mut sc.next);
                }
            }
        }
        total * scale
    }

    fn fill_zero(&mut self) {
        self.parameters_mut().for_each(|p| *p = 0.0);
    }

    fn rounded(&self) -> Vec<Dense<f32>> {
        self.layers
            .iter()
            .map(|l| Dense {
                n_in: l.n_in,
                n_out: l.n_out,
                weights: l.weights.iter().map(|&w| w as f32).collect(),
                bias: l.bias.iter().map(|&b| b as f32).collect(),
            })
            .collect()
    }

    fn from_stored(layers: &[Dense<f32>]) -> Self {
        Network {
            layers: layers
                .iter()
                .map(|l| Dense {
                    n_in: l.n_in,
                    n_out: l.n_out,
                    weights: l.weights.iter().map(|&w| w as f64).collect(),
                    bias: l.bias.iter().map(|&b| b as f64).collect(),
                })
                .collect(),
        }
    }
}

#[derive(Default)]
struct Scratch {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    next: Vec<f64>,
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    log_softmax(z).into_iter().map(f64::exp).collect()
}

/// Index of the largest value; the lowest index wins ties.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Immutable trained model. Weights are stored at 32-bit precision.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub input_spec: InputSpec,
    pub normalization: Normalization,
    pub layers: Vec<Dense<f32>>,
    pub train_meta: TrainMeta,
}

impl ModelCheckpoint {
    pub fn network(&self) -> Network {
        Network::from_stored(&self.layers)
    }

    pub fn with_network(&self, net: &Network) -> Self {
        ModelCheckpoint {
            layers: net.rounded(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ScorerError> {
        let bad = |m: String| Err(ScorerError::BadCheckpoint(m));
        if self.layers.is_empty() {
            return bad("no layers".into());
        }
        if self.layers[0].n_in != FEATURE_DIM || self.layers.last().unwrap().n_out != NUM_STAGES {
            return bad("network must map 5 features to 5 stages".into());
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.n_in * l.n_out || l.bias.len() != l.n_out {
                return bad(format!("layer {k} has inconsistent sizes"));
            }
            if k > 0 && self.layers[k - 1].n_out != l.n_in {
                return bad(format!("layer {k} input width does not match previous layer"));
            }
            if !l.weights.iter().chain(&l.bias).all(|v| v.is_finite()) {
                return bad(format!("layer {k} has non-finite values"));
            }
        }
        let n = &self.normalization;
        if n.mean.len() != FEATURE_DIM || n.sd.len() != FEATURE_DIM {
            return bad("normalization must have 5 entries".into());
        }
        if !n.sd.iter().all(|s| *s > 0.0 && s.is_finite()) || !n.mean.iter().all(|m| m.is_finite()) {
            return bad("normalization must be finite with sd > 0".into());
        }
        Ok(())
    }

    fn check_compatible(&self, set: &EpochSet) -> Result<(), ScorerError> {
        let ok = matches!(
            (&self.input_spec, &set.data),
            (InputSpec::Features { .. }, EpochData::Features(_)) | (InputSpec::Signal { .. }, EpochData::Signal(_))
        );
        if ok {
            Ok(())
        } else {
            Err(ScorerError::IncompatibleInputSpec(format!(
                "model expects {:?}, data from {} is {:?}",
                self.input_spec,
                set.origin,
                set.data.mode()
            )))
        }
    }

    fn normalized_rows(&self, set: &EpochSet) -> Result<Vec<Vec<f64>>, ScorerError> {
        self.check_compatible(set)?;
        Ok(set
            .features_for(&self.input_spec)?
            .iter()
            .map(|r| self.normalization.apply(r).to_vec())
            .collect())
    }

    pub fn to_json(&self) -> String {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            input_spec: self.input_spec,
            normalization: self.normalization.clone(),
            train_meta: self.train_meta.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerBlob {
                    n_in: l.n_in,
                    n_out: l.n_out,
                    weights: encode_f32(&l.weights),
                    bias: encode_f32(&l.bias),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ScorerError> {
        let file: CheckpointFile =
            serde_json::from_str(s).map_err(|e| ScorerError::BadCheckpoint(e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(ScorerError::BadCheckpoint(format!(
                "unsupported format {} v{}",
                file.format, file.version
            )));
        }
        let layers = file
            .layers
            .iter()
            .map(|b| {
                Ok(Dense {
                    n_in: b.n_in,
                    n_out: b.n_out,
                    weights: decode_f32(&b.weights)?,
                    bias: decode_f32(&b.bias)?,
                })
            })
            .collect::<Result<Vec<_>, ScorerError>>()?;
        let ckpt = ModelCheckpoint {
            input_spec: file.input_spec,
            normalization: file.normalization,
            layers,
            train_meta: file.train_meta,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), ScorerError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ScorerError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    input_spec: InputSpec,
    normalization: Normalization,
    train_meta: TrainMeta,
    layers: Vec<LayerBlob>,
}

#[derive(Serialize, Deserialize)]
struct LayerBlob {
    n_in: usize,
    n_out: usize,
    weights: String,
    bias: String,
}

fn encode_f32(v: &[f32]) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode_f32(s: &str) -> Result<Vec<f32>, ScorerError> {
    let bytes = B64.decode(s).map_err(|e| ScorerError::BadCheckpoint(e.to_string()))?;
    if bytes.len() % 4 != 0 {
        return Err(ScorerError::BadCheckpoint("blob length is not a multiple of 4".into()));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

fn class_indices(labels: &[StageLabel]) -> Vec<usize> {
    labels.iter().map(|l| l.ordinal()).collect()
}

fn predict_rows(net: &Network, rows: &[Vec<f64>]) -> Vec<StageLabel> {
    let mut acts = Vec::new();
    rows.iter()
        .map(|x| {
            net.forward_into(x, &mut acts);
            StageLabel::ALL[argmax(acts.last().unwrap())]
        })
        .collect()
}

/// One momentum step: `v <- momentum * v - lr * (g + wd * w)`, `w <- w + v`.
/// Weight decay applies to weights, not biases.
fn sgd_step(net: &mut Network, velocity: &mut Network, grad: &Network, cfg: &TrainConfig) {
    for ((l, v), g) in net.layers.iter_mut().zip(&mut velocity.layers).zip(&grad.layers) {
        for ((w, vw), gw) in l.weights.iter_mut().zip(&mut v.weights).zip(&g.weights) {
            *vw = cfg.momentum * *vw - cfg.learning_rate * (gw + cfg.weight_decay * *w);
            *w += *vw;
        }
        for ((b, vb), gb) in l.bias.iter_mut().zip(&mut v.bias).zip(&g.bias) {
            *vb = cfg.momentum * *vb - cfg.learning_rate * gb;
            *b += *vb;
        }
    }
}

fn run_training(
    init: ModelCheckpoint,
    train: &EpochSet,
    val: &EpochSet,
    cfg: &TrainConfig,
) -> Result<ModelCheckpoint, ScorerError> {
    let train_x = init.normalized_rows(train)?;
    let train_y = class_indices(&train.labels);
    let val_x = init.normalized_rows(val)?;

    let mut net = init.network();
    let mut velocity = Network::zeros(&net.dims());
    let mut rng: ChaCha8Rng = rng_for(&[b"shuffle".as_slice(), &cfg.seed.to_le_bytes()]);

    let val_mf1 = |snapshot: &ModelCheckpoint| -> Result<f64, ScorerError> {
        let pred = predict_rows(&snapshot.network(), &val_x);
        Ok(metrics::score(&val.labels, &pred)?.mf1)
    };
    let mut best = init;
    let mut best_mf1 = val_mf1(&best)?;
    let mut best_epoch = 0;

    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut grad = Network::zeros(&net.dims());
    let mut scratch = Scratch::default();
    let mut rows: Vec<(&[f64], usize)> = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            rows.clear();
            rows.extend(batch.iter().map(|&i| (train_x[i].as_slice(), train_y[i])));
            grad.fill_zero();
            let loss = net.accumulate_gradient(&rows, &mut grad, &mut scratch);
            if !loss.is_finite() {
                return Err(ScorerError::NonFiniteLoss { epoch });
            }
            sgd_step(&mut net, &mut velocity, &grad, cfg);
        }
        if !net.parameters().all(|p| p.is_finite()) {
            return Err(ScorerError::NonFiniteLoss { epoch });
        }
        let snapshot = best.with_network(&net);
        let mf1 = val_mf1(&snapshot)?;
        if mf1 > best_mf1 {
            best = snapshot;
            best_mf1 = mf1;
            best_epoch = epoch;
        }
    }
    best.train_meta.epochs_trained = best_epoch;
    best.train_meta.best_val_mf1 = best_mf1;
    best.train_meta.seed = cfg.seed;
    Ok(best)
}

fn check_sets(train: &EpochSet, val: &EpochSet) -> Result<(), ScorerError> {
    if train.is_empty() {
        return Err(ScorerError::EmptySet("training"));
    }
    if val.is_empty() {
        return Err(ScorerError::EmptySet("validation"));
    }
    Ok(())
}

/// Train from seeded random weights on `train`, selecting on `val`.
pub fn pretrain(train: &EpochSet, val: &EpochSet, cfg: &TrainConfig) -> Result<ModelCheckpoint, ScorerError> {
    cfg.validate()?;
    check_sets(train, val)?;
    let input_spec = train.natural_spec();
    let rows = train.features_for(&input_spec)?;
    let dims = [FEATURE_DIM, cfg.hidden[0], cfg.hidden[1], NUM_STAGES];
    let mut rng: ChaCha8Rng = rng_for(&[b"init".as_slice(), &cfg.seed.to_le_bytes()]);
    let net = Network::random(&dims, INIT_SD, &mut rng);
    let init = ModelCheckpoint {
        input_spec,
        normalization: Normalization::fit(&rows),
        layers: net.rounded(),
        train_meta: TrainMeta {
            source: train.origin.clone(),
            finetuned_on: None,
            seed: cfg.seed,
            epochs_trained: 0,
            best_val_mf1: 0.0,
        },
    };
    run_training(init, train, val, cfg)
}

/// Continue training every parameter of `init` on the target's data.
///
/// Input normalization is part of the checkpoint and is kept as is.
pub fn finetune(
    init: &ModelCheckpoint,
    train: &EpochSet,
    val: &EpochSet,
    cfg: &TrainConfig,
) -> Result<ModelCheckpoint, ScorerError> {
    cfg.validate()?;
    check_sets(train, val)?;
    init.validate()?;
    let mut start = init.clone();
    start.train_meta.finetuned_on = Some(train.origin.clone());
    run_training(start, train, val, cfg)
}

pub fn predict(model: &ModelCheckpoint, set: &EpochSet) -> Result<Vec<StageLabel>, ScorerError> {
    let rows = model.normalized_rows(set)?;
    Ok(predict_rows(&model.network(), &rows))
}

pub fn evaluate(model: &ModelCheckpoint, set: &EpochSet) -> Result<MetricSet, ScorerError> {
    if set.is_empty() {
        return Err(ScorerError::EmptySet("evaluation"));
    }
    Ok(metrics::score(&set.labels, &predict(model, set)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate, split_subjects, Condition, DatasetDescriptor, GenMode, GenParams};
    use rand::SeedableRng;

    fn id(s: &str) -> ChannelId {
        ChannelId::new(s, "C4")
    }

    /// Two well-separated clusters labelled W and N2.
    fn separable(n: usize, seed: u64) -> EpochSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let (label, centre) = if i % 2 == 0 { (StageLabel::W, -2.0) } else { (StageLabel::N2, 2.0) };
            feats.push(std::array::from_fn(|_| centre + rng.random_range(-0.5f32..0.5)));
            labels.push(label);
        }
        EpochSet::from_features(id("toy"), feats, labels)
    }

    fn cohort_sets(env: &str, seed: u64) -> (EpochSet, EpochSet, EpochSet) {
        let d = DatasetDescriptor {
            dataset_id: format!("DS-{env}"),
            environment_id: env.into(),
            condition: Condition::Healthy,
            channel: "C4".into(),
            sampling_rate_hz: 100,
            epoch_seconds: 30,
        };
        let p = GenParams { n_subjects: 10, epochs_per_subject: 200, seed, ..Default::default() };
        let c = generate(&d, &p).unwrap();
        let s = split_subjects(&c, 1).unwrap();
        (
            EpochSet::from_subjects(&c, &s.train_subjects),
            EpochSet::from_subjects(&c, &s.val_subjects),
            EpochSet::from_subjects(&c, &s.test_subjects),
        )
    }

    fn quick() -> TrainConfig {
        TrainConfig { max_epochs: 15, ..Default::default() }
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let train = separable(200, 1);
        let m = pretrain(&train, &train, &TrainConfig { max_epochs: 50, ..Default::default() }).unwrap();
        assert_eq!(evaluate(&m, &train).unwrap().acc, 1.0);
    }

    #[test]
    fn pretrain_is_deterministic() {
        let (tr, va, _) = cohort_sets("lab", 3);
        let a = pretrain(&tr, &va, &quick()).unwrap();
        let b = pretrain(&tr, &va, &quick()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json(), b.to_json());
        let c = pretrain(&tr, &va, &TrainConfig { seed: 1, ..quick() }).unwrap();
        assert_ne!(a.layers, c.layers);
    }

    #[test]
    fn selection_never_worse_than_initial_weights() {
        let (tr, _, _) = cohort_sets("lab", 4);
        let zero_epochs = pretrain(&tr, &tr, &TrainConfig { max_epochs: 0, ..Default::default() }).unwrap();
        let trained = pretrain(&tr, &tr, &quick()).unwrap();
        assert!(trained.train_meta.best_val_mf1 >= zero_epochs.train_meta.best_val_mf1);
        assert_eq!(zero_epochs.train_meta.epochs_trained, 0);
    }

    #[test]
    fn finetune_with_no_epochs_keeps_weights() {
        let (tr, va, _) = cohort_sets("lab", 5);
        let (tr2, va2, _) = cohort_sets("clinic", 5);
        let m = pretrain(&tr, &va, &quick()).unwrap();
        let ft = finetune(&m, &tr2, &va2, &TrainConfig { max_epochs: 0, ..Default::default() }).unwrap();
        assert_eq!(ft.layers, m.layers);
        assert_eq!(ft.normalization, m.normalization);
        assert_eq!(ft.train_meta.finetuned_on, Some(tr2.origin.clone()));
        assert_eq!(ft.train_meta.source, m.train_meta.source);
        assert_eq!(ft.train_meta.best_val_mf1, evaluate(&m, &va2).unwrap().mf1);
    }

    #[test]
    fn finetune_on_same_distribution_does_not_regress() {
        let mut diffs = Vec::new();
        for seed in 0..3 {
            let (tr, va, _) = cohort_sets("lab", 20 + seed);
            let cfg = TrainConfig { seed, ..quick() };
            let m = pretrain(&tr, &va, &cfg).unwrap();
            let ft = finetune(&m, &tr, &va, &cfg).unwrap();
            diffs.push(ft.train_meta.best_val_mf1 - m.train_meta.best_val_mf1);
        }
        assert!(diffs.iter().sum::<f64>() / 3.0 >= -0.02, "{diffs:?}");
    }

    #[test]
    fn finetune_beats_direct_transfer_across_environments() {
        let mut dt = 0.0;
        let mut ft = 0.0;
        for seed in 0..3 {
            let (tr, va, _) = cohort_sets("lab", 40 + seed);
            let (tr2, va2, _) = cohort_sets("home", 40 + seed);
            let cfg = TrainConfig { seed, ..quick() };
            let m = pretrain(&tr, &va, &cfg).unwrap();
            dt += evaluate(&m, &va2).unwrap().mf1;
            ft += finetune(&m, &tr2, &va2, &cfg).unwrap().train_meta.best_val_mf1;
        }
        assert!(ft >= dt, "ft {ft} dt {dt}");
    }

    #[test]
    fn zero_model_predicts_wake() {
        let (tr, va, te) = cohort_sets("lab", 6);
        let mut m = pretrain(&tr, &va, &TrainConfig { max_epochs: 0, ..Default::default() }).unwrap();
        for l in &mut m.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        assert!(predict(&m, &te).unwrap().iter().all(|s| *s == StageLabel::W));

        m.layers.last_mut().unwrap().bias[StageLabel::N2.ordinal()] = 10.0;
        assert!(predict(&m, &te).unwrap().iter().all(|s| *s == StageLabel::N2));
    }

    #[test]
    fn checkpoint_file_round_trip() {
        let (tr, va, te) = cohort_sets("lab", 7);
        let m = pretrain(&tr, &va, &quick()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let back = ModelCheckpoint::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(predict(&back, &te).unwrap(), predict(&m, &te).unwrap());
    }

    #[test]
    fn corrupt_checkpoints_rejected() {
        let (tr, va, _) = cohort_sets("lab", 8);
        let m = pretrain(&tr, &va, &TrainConfig { max_epochs: 1, ..Default::default() }).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        v["layers"][0]["bias"] = "AAAA".into();
        assert!(matches!(
            ModelCheckpoint::from_json(&v.to_string()),
            Err(ScorerError::BadCheckpoint(_))
        ));
        let mut bad_sd = m.clone();
        bad_sd.normalization.sd[0] = 0.0;
        assert!(ModelCheckpoint::from_json(&bad_sd.to_json()).is_err());
    }

    #[test]
    fn errors_surface() {
        let (tr, va, _) = cohort_sets("lab", 9);
        let empty = EpochSet::from_features(id("x"), vec![], vec![]);
        assert!(matches!(pretrain(&empty, &va, &quick()), Err(ScorerError::EmptySet(_))));
        assert!(matches!(pretrain(&tr, &empty, &quick()), Err(ScorerError::EmptySet(_))));
        assert!(matches!(
            pretrain(&tr, &va, &TrainConfig { momentum: 1.0, ..quick() }),
            Err(ScorerError::InvalidConfig(_))
        ));
        let diverge = TrainConfig { learning_rate: f64::MAX, momentum: 0.9, ..quick() };
        assert!(matches!(pretrain(&tr, &va, &diverge), Err(ScorerError::NonFiniteLoss { .. })));
    }

    #[test]
    fn signal_inputs_resampled_to_model_rate() {
        let mk = |rate: u32, env: &str| {
            let d = DatasetDescriptor {
                dataset_id: format!("S{rate}"),
                environment_id: env.into(),
                condition: Condition::Healthy,
                channel: "C4".into(),
                sampling_rate_hz: rate,
                epoch_seconds: 30,
            };
            let p = GenParams { n_subjects: 5, epochs_per_subject: 12, mode: GenMode::Signal, ..Default::default() };
            let c = generate(&d, &p).unwrap();
            let ids: Vec<String> = c.subjects.iter().map(|s| s.subject_id.clone()).collect();
            EpochSet::from_subjects(&c, &ids)
        };
        let src = mk(100, "a");
        let tgt = mk(256, "b");
        let m = pretrain(&src, &src, &TrainConfig { max_epochs: 3, ..Default::default() }).unwrap();
        assert_eq!(m.input_spec, InputSpec::Signal { rate_hz: 100 });
        assert_eq!(predict(&m, &tgt).unwrap().len(), tgt.len());
        let ft = finetune(&m, &tgt, &tgt, &TrainConfig { max_epochs: 2, ..Default::default() }).unwrap();
        assert_eq!(ft.input_spec, m.input_spec);

        let feats = EpochSet::from_features(id("f"), vec![[0.0; 5]], vec![StageLabel::W]);
        assert!(matches!(predict(&m, &feats), Err(ScorerError::IncompatibleInputSpec(_))));
        assert!(matches!(finetune(&m, &feats, &feats, &quick()), Err(ScorerError::IncompatibleInputSpec(_))));
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::random(&[5, 8, 8, 5], 2.0, &mut rng);
        for _ in 0..100 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-10.0..10.0)).collect();
            assert!((net.probabilities(&x).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn one_step_moves_every_layer() {
        let (tr, _, _) = cohort_sets("lab", 10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::random(&[5, 32, 32, 5], INIT_SD, &mut rng);
        let xs: Vec<Vec<f64>> = tr
            .features_for(&tr.natural_spec())
            .unwrap()
            .iter()
            .take(64)
            .map(|r| r.to_vec())
            .collect();
        let ys = class_indices(&tr.labels[..64]);
        let (_, grad) = net.loss_and_gradient(&xs, &ys);
        let mut stepped = net.clone();
        let mut vel = Network::zeros(&net.dims());
        sgd_step(&mut stepped, &mut vel, &grad, &TrainConfig::default());
        for (a, b) in net.layers.iter().zip(&stepped.layers) {
            assert_ne!(a.weights, b.weights);
            assert_ne!(a.bias, b.bias);
        }
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.0; 5]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0, 0.0]), 1);
    }
}
