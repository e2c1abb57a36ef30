//! Seeded synthetic cohorts.
//!
//! A cohort is one single-channel dataset: a list of subjects, each with a
//! Markov-chain hypnogram and one payload per epoch (a five-band feature
//! vector, or a raw signal). Three characteristic axes perturb the payload:
//!
//! * the recording **area** of the channel scales the class signature
//!   band-wise,
//! * the recording **environment** adds an offset and scales the noise,
//! * the subject **condition** adds a small offset and fragments the
//!   hypnogram (apnea).
//!
//! Each axis value maps to a fixed unit direction derived from the
//! generation seed, so two cohorts that share an axis value share its
//! perturbation exactly.

mod format;

use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding::{hash64, rng_for};
use crate::stages::{self, StageLabel, NUM_STAGES};

pub use format::{decode_subject, encode_subject, read_cohort, write_cohort, MAGIC, VERSION};

/// Number of band-power features per epoch.
pub const FEATURE_DIM: usize = 5;

/// Class signatures over (delta, theta, alpha, sigma, beta), rows in stage
/// ordinal order.
pub const BASE_SIGNATURES: [[f64; FEATURE_DIM]; NUM_STAGES] = [
    [0.5, 0.5, 2.0, 0.5, 1.5],
    [1.0, 2.0, 0.7, 0.5, 0.7],
    [1.5, 1.0, 0.5, 2.0, 0.5],
    [3.0, 1.0, 0.3, 0.5, 0.2],
    [1.0, 1.5, 0.8, 0.5, 1.0],
];

pub const HEALTHY_STAY: f64 = 0.85;
pub const APNEA_STAY: f64 = 0.75;

/// Relative weights of the leaving transitions for each stage, before the
/// stay probability is applied.
const LEAVE_WEIGHTS: [[f64; NUM_STAGES]; NUM_STAGES] = [
    [0.0, 0.70, 0.20, 0.00, 0.10],
    [0.25, 0.0, 0.60, 0.00, 0.15],
    [0.10, 0.15, 0.0, 0.50, 0.25],
    [0.10, 0.05, 0.85, 0.0, 0.00],
    [0.30, 0.30, 0.40, 0.00, 0.0],
];

/// Signal-mode white noise, relative to the feature noise level.
const SIGNAL_NOISE_SCALE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("cannot derive a brain area from channel `{0}`")]
    UnknownArea(String),
    #[error("need at least 5 subjects to split, got {0}")]
    TooFewSubjects(usize),
    #[error("malformed cohort data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Stage(#[from] stages::StageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    Healthy,
    Apnea,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Healthy => "Healthy",
            Condition::Apnea => "Apnea",
        }
    }
}

/// Brain area of an electrode: frontal, central, parietal, occipital.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Area {
    F,
    C,
    P,
    O,
}

impl Area {
    /// Area of the first electrode of a (possibly bipolar) channel label,
    /// e.g. `Fpz-Cz` is frontal and `Pz-Oz` parietal.
    pub fn from_channel(channel: &str) -> Result<Area, SynthError> {
        match channel.chars().next().map(|c| c.to_ascii_uppercase()) {
            Some('F') => Ok(Area::F),
            Some('C') => Ok(Area::C),
            Some('P') => Ok(Area::P),
            Some('O') => Ok(Area::O),
            _ => Err(SynthError::UnknownArea(channel.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Area::F => "F",
            Area::C => "C",
            Area::P => "P",
            Area::O => "O",
        }
    }
}

/// Concrete (dataset, channel) identity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChannelId {
    pub dataset_id: String,
    pub channel: String,
}

impl ChannelId {
    pub fn new(dataset_id: impl Into<String>, channel: impl Into<String>) -> Self {
        ChannelId {
            dataset_id: dataset_id.into(),
            channel: channel.into(),
        }
    }

    /// File-name friendly form, `dataset_channel`.
    pub fn slug(&self) -> String {
        format!("{}_{}", self.dataset_id, self.channel)
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect()
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.dataset_id, self.channel)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub dataset_id: String,
    pub environment_id: String,
    pub condition: Condition,
    pub channel: String,
    pub sampling_rate_hz: u32,
    pub epoch_seconds: u32,
}

impl DatasetDescriptor {
    pub fn area(&self) -> Result<Area, SynthError> {
        Area::from_channel(&self.channel)
    }

    pub fn samples_per_epoch(&self) -> usize {
        self.sampling_rate_hz as usize * self.epoch_seconds as usize
    }

    pub fn id(&self) -> ChannelId {
        ChannelId::new(&self.dataset_id, &self.channel)
    }

    pub fn with_channel(&self, channel: &str) -> DatasetDescriptor {
        DatasetDescriptor {
            channel: channel.to_string(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.area()?;
        if self.sampling_rate_hz == 0 || self.epoch_seconds == 0 {
            return Err(SynthError::InvalidParams(format!(
                "{}: sampling rate and epoch length must be positive",
                self.id()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GenMode {
    Features,
    Signal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub n_subjects: usize,
    pub epochs_per_subject: usize,
    pub seed: u64,
    pub env_shift: f64,
    pub area_shift: f64,
    pub cond_shift: f64,
    pub noise_sd: f64,
    pub mode: GenMode,
    pub apnea_n1_boost: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            n_subjects: 12,
            epochs_per_subject: 400,
            seed: 0,
            env_shift: 1.5,
            area_shift: 0.8,
            cond_shift: 0.4,
            noise_sd: 0.5,
            mode: GenMode::Features,
            apnea_n1_boost: 1.6,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidParams(m.to_string()));
        if self.n_subjects == 0 || self.epochs_per_subject == 0 {
            return bad("n_subjects and epochs_per_subject must be positive");
        }
        for (name, v) in [
            ("env_shift", self.env_shift),
            ("area_shift", self.area_shift),
            ("cond_shift", self.cond_shift),
            ("noise_sd", self.noise_sd),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(&format!("{name} must be finite and >= 0"));
            }
        }
        if !(self.apnea_n1_boost.is_finite() && self.apnea_n1_boost > 0.0) {
            return bad("apnea_n1_boost must be finite and > 0");
        }
        Ok(())
    }
}

/// Per-epoch payloads of one subject.
#[derive(Debug, Clone, PartialEq)]
pub enum EpochData {
    Features(Vec<[f32; FEATURE_DIM]>),
    Signal(Vec<Vec<f32>>),
}

impl EpochData {
    pub fn len(&self) -> usize {
        match self {
            EpochData::Features(v) => v.len(),
            EpochData::Signal(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode(&self) -> GenMode {
        match self {
            EpochData::Features(_) => GenMode::Features,
            EpochData::Signal(_) => GenMode::Signal,
        }
    }

    fn retain_range(&mut self, start: usize, end: usize) {
        match self {
            EpochData::Features(v) => {
                v.truncate(end);
                v.drain(..start);
            }
            EpochData::Signal(v) => {
                v.truncate(end);
                v.drain(..start);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecording {
    pub subject_id: String,
    pub epochs: EpochData,
    pub labels: Vec<StageLabel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub descriptor: DatasetDescriptor,
    pub subjects: Vec<SubjectRecording>,
    pub gen_params: GenParams,
}

impl Cohort {
    pub fn subject(&self, id: &str) -> Option<&SubjectRecording> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }

    pub fn n_epochs(&self) -> usize {
        self.subjects.iter().map(|s| s.labels.len()).sum()
    }

    /// Apply [`stages::trim_wake`] to every subject's hypnogram.
    pub fn trim_wake(&mut self, keep_minutes: f64) -> Result<(), SynthError> {
        let epoch_seconds = self.descriptor.epoch_seconds as f64;
        for s in &mut self.subjects {
            let seq: Vec<(usize, StageLabel)> = s.labels.iter().copied().enumerate().collect();
            let kept = stages::trim_wake(seq, keep_minutes, epoch_seconds)?;
            let start = kept.first().map(|(i, _)| *i).unwrap_or(0);
            let end = kept.last().map(|(i, _)| *i + 1).unwrap_or(0);
            s.epochs.retain_range(start, end);
            s.labels = kept.into_iter().map(|(_, l)| l).collect();
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.subjects.is_empty() {
            return Err(SynthError::Format("cohort has no subjects".into()));
        }
        let mut seen = HashSet::new();
        for s in &self.subjects {
            if !seen.insert(&s.subject_id) {
                return Err(SynthError::Format(format!("duplicate subject id {}", s.subject_id)));
            }
            if s.epochs.len() != s.labels.len() {
                return Err(SynthError::Format(format!(
                    "subject {}: {} epochs but {} labels",
                    s.subject_id,
                    s.epochs.len(),
                    s.labels.len()
                )));
            }
            if let EpochData::Signal(v) = &s.epochs {
                let want = self.descriptor.samples_per_epoch();
                if let Some(bad) = v.iter().find(|e| e.len() != want) {
                    return Err(SynthError::Format(format!(
                        "subject {}: epoch with {} samples, expected {want}",
                        s.subject_id,
                        bad.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Row-stochastic hypnogram transition matrix for a condition.
pub fn transition_matrix(condition: Condition, apnea_n1_boost: f64) -> [[f64; NUM_STAGES]; NUM_STAGES] {
    let stay = match condition {
        Condition::Healthy => HEALTHY_STAY,
        Condition::Apnea => APNEA_STAY,
    };
    let mut m = [[0.0; NUM_STAGES]; NUM_STAGES];
    for (i, row) in m.iter_mut().enumerate() {
        let leave: f64 = LEAVE_WEIGHTS[i].iter().sum();
        for (j, p) in row.iter_mut().enumerate() {
            *p = if i == j { stay } else { (1.0 - stay) * LEAVE_WEIGHTS[i][j] / leave };
        }
        if condition == Condition::Apnea {
            row[StageLabel::W.ordinal()] *= apnea_n1_boost;
            row[StageLabel::N1.ordinal()] *= apnea_n1_boost;
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
        }
    }
    m
}

/// Sample a hypnogram of `n` epochs starting in W.
pub fn sample_hypnogram<R: Rng>(
    matrix: &[[f64; NUM_STAGES]; NUM_STAGES],
    n: usize,
    rng: &mut R,
) -> Vec<StageLabel> {
    let mut out = Vec::with_capacity(n);
    let mut state = 0usize;
    for i in 0..n {
        if i > 0 {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut next = NUM_STAGES - 1;
            for (j, p) in matrix[state].iter().enumerate() {
                acc += p;
                if u < acc {
                    next = j;
                    break;
                }
            }
            state = next;
        }
        out.push(StageLabel::ALL[state]);
    }
    out
}

/// Unit vector in R^5 fixed by `(seed, axis, value)`.
pub fn axis_direction(seed: u64, axis: &str, value: &str) -> [f64; FEATURE_DIM] {
    let mut rng = rng_for(&["direction".as_bytes(), &seed.to_le_bytes(), axis.as_bytes(), value.as_bytes()]);
    loop {
        let v: [f64; FEATURE_DIM] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.map(|x| x / norm);
        }
    }
}

/// Per-environment noise multiplier in `[0.8, 1.25]`.
pub fn environment_noise_factor(seed: u64, environment_id: &str) -> f64 {
    let mut rng = rng_for(&["env-noise".as_bytes(), &seed.to_le_bytes(), environment_id.as_bytes()]);
    0.8 + 0.45 * rng.random::<f64>()
}

/// Subject ids are shared by every channel of one dataset.
pub fn subject_id(dataset_id: &str, index: usize) -> String {
    format!("{dataset_id}-s{index:03}")
}

/// Generate a cohort; a pure function of `(descriptor, params)`.
///
/// Hypnograms depend only on the dataset and subject, so channels of one
/// dataset share labels, as simultaneous recordings do.
pub fn generate(descriptor: &DatasetDescriptor, params: &GenParams) -> Result<Cohort, SynthError> {
    params.validate()?;
    descriptor.validate()?;
    let area = descriptor.area()?;
    let seed = params.seed;

    let gain = axis_direction(seed, "area", area.as_str()).map(|u| 1.0 + params.area_shift * u);
    let env = axis_direction(seed, "environment", &descriptor.environment_id);
    let cond = axis_direction(seed, "condition", descriptor.condition.as_str());
    let offset: [f64; FEATURE_DIM] =
        std::array::from_fn(|b| params.env_shift * env[b] + params.cond_shift * cond[b]);
    let noise_sd = params.noise_sd * environment_noise_factor(seed, &descriptor.environment_id);
    let matrix = transition_matrix(descriptor.condition, params.apnea_n1_boost);

    let seed_bytes = seed.to_le_bytes();
    let subjects = (0..params.n_subjects)
        .map(|i| {
            let index = (i as u64).to_le_bytes();
            let mut label_rng =
                rng_for(&[b"labels".as_slice(), &seed_bytes, descriptor.dataset_id.as_bytes(), &index]);
            let labels = sample_hypnogram(&matrix, params.epochs_per_subject, &mut label_rng);

            let mut rng = rng_for(&[
                b"payload".as_slice(),
                &seed_bytes,
                descriptor.dataset_id.as_bytes(),
                descriptor.channel.as_bytes(),
                &index,
            ]);
            let features: Vec<[f64; FEATURE_DIM]> = labels
                .iter()
                .map(|l| {
                    let base = &BASE_SIGNATURES[l.ordinal()];
                    std::array::from_fn(|b| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        base[b] * gain[b] + offset[b] + noise_sd * z
                    })
                })
                .collect();
            let epochs = match params.mode {
                GenMode::Features => {
                    EpochData::Features(features.iter().map(|f| f.map(|v| v as f32)).collect())
                }
                GenMode::Signal => EpochData::Signal(
                    features
                        .iter()
                        .map(|f| synthesize_epoch(f, descriptor, noise_sd, &mut rng))
                        .collect(),
                ),
            };
            SubjectRecording {
                subject_id: subject_id(&descriptor.dataset_id, i),
                epochs,
                labels,
            }
        })
        .collect();

    Ok(Cohort {
        descriptor: descriptor.clone(),
        subjects,
        gen_params: params.clone(),
    })
}

/// One sinusoid per band with random in-band frequency and phase; negative
/// band powers are clamped to zero.
fn synthesize_epoch(
    band_power: &[f64; FEATURE_DIM],
    descriptor: &DatasetDescriptor,
    noise_sd: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f32> {
    use crate::signals::BANDS;
    let rate = descriptor.sampling_rate_hz as f64;
    let nyquist = rate / 2.0;
    let tones: Vec<(f64, f64, f64)> = BANDS
        .iter()
        .zip(band_power)
        .map(|(&(lo, hi), &p)| {
            let hi = hi.min(nyquist);
            let f = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (p.max(0.0).sqrt(), f, phase)
        })
        .collect();
    (0..descriptor.samples_per_epoch())
        .map(|i| {
            let t = i as f64 / rate;
            let tone: f64 = tones
                .iter()
                .map(|(a, f, ph)| a * (std::f64::consts::TAU * f * t + ph).sin())
                .sum();
            let z: f64 = StandardNormal.sample(rng);
            (tone + SIGNAL_NOISE_SCALE * noise_sd * z) as f32
        })
        .collect()
}

/// Subject-level train / validation / test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_subjects: Vec<String>,
    pub val_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
    pub seed: u64,
}

/// `(train, val, test)` sizes for `n` subjects: 20% test, then 10% of the
/// remainder (at least one) for validation.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let test = (0.2 * n as f64).round() as usize;
    let val = ((0.1 * (n - test) as f64).round() as usize).max(1);
    (n - test - val, val, test)
}

pub fn split_subjects(cohort: &Cohort, seed: u64) -> Result<SplitSpec, SynthError> {
    let n = cohort.subjects.len();
    if n < 5 {
        return Err(SynthError::TooFewSubjects(n));
    }
    let mut ids: Vec<String> = cohort.subjects.iter().map(|s| s.subject_id.clone()).collect();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(hash64(&[b"split".as_slice(), &seed.to_le_bytes()])));
    let (train, val, test) = split_sizes(n);
    let mut take = |k: usize| {
        let mut part: Vec<String> = ids.drain(..k).collect();
        part.sort();
        part
    };
    let test_subjects = take(test);
    let val_subjects = take(val);
    let train_subjects = take(train);
    Ok(SplitSpec {
        train_subjects,
        val_subjects,
        test_subjects,
        seed,
    })
}
