//! End-to-end synthetic study: cohorts, pre-training, FS/DT/FT evaluation.
//!
//! Work is split into independent jobs (one training or one evaluation).
//! Jobs run on a rayon pool of `jobs` threads and share nothing mutable;
//! finished records go through a channel to a single ledger writer.
//!
//! Seeds:
//! * cohort data comes from the manifest's `gen_params.seed`;
//! * subject splits use `hash64(study_seed, "split", dataset)`, the same for
//!   every repeat and every setting, so FS, DT and FT see one test set;
//! * repeat `r` of job `j` trains with `hash64(study_seed, j, r)`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rayon::prelude::*;
use thiserror::Error;

use crate::ledger::{LedgerError, LedgerMeta, LedgerWriter, RunLedger};
use crate::manifest::Manifest;
use crate::plan::{enumerate_sources, enumerate_targets, PlanError};
use crate::scorer::{evaluate, finetune, pretrain, EpochSet, ModelCheckpoint, ScorerError, TrainConfig};
use crate::seeding::hash64;
use crate::synthgen::{
    generate, split_subjects, write_cohort, ChannelId, Cohort, DatasetDescriptor, SplitSpec, SynthError,
};
use crate::transferscore::{EvalRecord, RecordKey, Setting};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("invalid study config: {0}")]
    Config(String),
    #[error("job `{job}` failed: {source}")]
    Job { job: String, source: ScorerError },
    #[error("cohort {channel}: {source}")]
    Cohort { channel: ChannelId, source: SynthError },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub manifest: Manifest,
    pub ledger_path: PathBuf,
    pub repeats: u32,
    pub seed: u64,
    pub train: TrainConfig,
    /// Worker threads; 0 lets rayon decide.
    pub jobs: usize,
    /// Stop after this many new records (for interruption tests).
    pub record_limit: Option<usize>,
}

impl StudyConfig {
    pub fn new(manifest: Manifest, ledger_path: impl Into<PathBuf>) -> Self {
        let train = manifest.train_config();
        StudyConfig {
            manifest,
            ledger_path: ledger_path.into(),
            repeats: 3,
            seed: 0,
            train,
            jobs: 0,
            record_limit: None,
        }
    }

    pub fn meta(&self) -> LedgerMeta {
        LedgerMeta {
            manifest_hash: Some(self.manifest.hash()),
            study_seed: Some(self.seed),
            exhaustive: self.manifest.exhaustive,
            train: Some(self.train.clone()),
            ..LedgerMeta::new(self.manifest.universe(), self.repeats)
        }
    }
}

/// What a finished `run_study` call did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudyOutcome {
    pub pretrained: usize,
    pub written: usize,
    pub remaining: usize,
}

impl StudyOutcome {
    pub fn complete(&self) -> bool {
        self.remaining == 0
    }
}

/// Train/val/test sets of one concrete channel.
pub struct ChannelData {
    pub split: SplitSpec,
    pub train: EpochSet,
    pub val: EpochSet,
    pub test: EpochSet,
}

/// Training seed for repeat `repeat` of the job named `job`.
pub fn job_seed(study_seed: u64, job: &str, repeat: u32) -> u64 {
    hash64(&[study_seed.to_le_bytes().as_slice(), job.as_bytes(), &repeat.to_le_bytes()])
}

pub fn split_seed(study_seed: u64, dataset_id: &str) -> u64 {
    hash64(&[study_seed.to_le_bytes().as_slice(), b"split", dataset_id.as_bytes()])
}

fn pretrain_job(ch: &ChannelId) -> String {
    format!("pretrain {ch}")
}

fn finetune_job(src: &ChannelId, tgt: &ChannelId) -> String {
    format!("finetune {src} -> {tgt}")
}

/// Every concrete channel the study touches: sources first, then targets
/// that are not sources, each once.
pub fn study_channels(manifest: &Manifest) -> Result<Vec<DatasetDescriptor>, PlanError> {
    let universe = manifest.universe();
    let mut out: Vec<DatasetDescriptor> = Vec::new();
    for d in enumerate_sources(&universe)?.into_iter().chain(enumerate_targets(&universe)?) {
        if !out.iter().any(|o| o.id() == d.id()) {
            out.push(d);
        }
    }
    Ok(out)
}

/// Generate the cohort of one channel, applying the manifest's wake trim.
pub fn channel_cohort(manifest: &Manifest, d: &DatasetDescriptor) -> Result<Cohort, StudyError> {
    let wrap = |source| StudyError::Cohort { channel: d.id(), source };
    let mut cohort = generate(d, &manifest.gen_params).map_err(wrap)?;
    let entry = manifest.datasets.iter().find(|e| e.id == d.dataset_id).expect("channel from manifest");
    if let Some(minutes) = entry.trim_wake_minutes {
        cohort.trim_wake(minutes).map_err(wrap)?;
    }
    Ok(cohort)
}

/// Write every study cohort under `out/<slug>/`.
pub fn generate_cohorts(manifest: &Manifest, out: &Path) -> Result<Vec<ChannelId>, StudyError> {
    let channels = study_channels(manifest)?;
    channels
        .par_iter()
        .map(|d| {
            let cohort = channel_cohort(manifest, d)?;
            write_cohort(&cohort, &out.join(d.id().slug()))
                .map_err(|source| StudyError::Cohort { channel: d.id(), source })?;
            Ok(d.id())
        })
        .collect()
}

fn channel_data(manifest: &Manifest, d: &DatasetDescriptor, study_seed: u64) -> Result<ChannelData, StudyError> {
    let cohort = channel_cohort(manifest, d)?;
    let split = split_subjects(&cohort, split_seed(study_seed, &d.dataset_id))
        .map_err(|source| StudyError::Cohort { channel: d.id(), source })?;
    Ok(ChannelData {
        train: EpochSet::from_subjects(&cohort, &split.train_subjects),
        val: EpochSet::from_subjects(&cohort, &split.val_subjects),
        test: EpochSet::from_subjects(&cohort, &split.test_subjects),
        split,
    })
}

fn with_seed(cfg: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..cfg.clone() }
}

/// Run (or resume) the study, appending to `cfg.ledger_path`.
///
/// Keys already in the ledger are skipped. When the last pending record is
/// written the ledger is rewritten in canonical order; a call that finds
/// nothing pending leaves the file untouched.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyOutcome, StudyError> {
    if cfg.repeats == 0 {
        return Err(StudyError::Config("repeats must be >= 1".into()));
    }
    cfg.train.validate().map_err(|e| StudyError::Config(e.to_string()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| StudyError::Pool(e.to_string()))?;
    pool.install(|| run_in_pool(cfg))
}

fn run_in_pool(cfg: &StudyConfig) -> Result<StudyOutcome, StudyError> {
    let meta = cfg.meta();
    let (mut writer, existing) = LedgerWriter::open(&cfg.ledger_path, &meta)?;
    let all_pending = existing.pending()?;
    let mut pending = all_pending.clone();
    if let Some(limit) = cfg.record_limit {
        pending.truncate(limit);
    }
    if pending.is_empty() {
        return Ok(StudyOutcome { pretrained: 0, written: 0, remaining: all_pending.len() });
    }

    // Channels and pre-trained models the pending records depend on.
    let mut needed_models: BTreeSet<(ChannelId, u32)> = BTreeSet::new();
    let mut needed_data: BTreeSet<ChannelId> = BTreeSet::new();
    for k in &pending {
        needed_data.insert(k.target.clone());
        let model_owner = k.source.clone().unwrap_or_else(|| k.target.clone());
        needed_models.insert((model_owner.clone(), k.repeat));
        needed_data.insert(model_owner);
    }

    let descriptors: HashMap<ChannelId, DatasetDescriptor> =
        study_channels(&cfg.manifest)?.into_iter().map(|d| (d.id(), d)).collect();
    let data: HashMap<ChannelId, ChannelData> = needed_data
        .par_iter()
        .map(|id| Ok((id.clone(), channel_data(&cfg.manifest, &descriptors[id], cfg.seed)?)))
        .collect::<Result<_, StudyError>>()?;

    let models: BTreeMap<(ChannelId, u32), (u64, ModelCheckpoint)> = needed_models
        .par_iter()
        .map(|(id, repeat)| {
            let job = pretrain_job(id);
            let seed = job_seed(cfg.seed, &job, *repeat);
            let d = &data[id];
            let model = pretrain(&d.train, &d.val, &with_seed(&cfg.train, seed))
                .map_err(|source| StudyError::Job { job: format!("{job} #{repeat}"), source })?;
            Ok(((id.clone(), *repeat), (seed, model)))
        })
        .collect::<Result<_, StudyError>>()?;

    let (tx, rx) = mpsc::channel::<EvalRecord>();
    let eval = |k: &RecordKey| -> Result<EvalRecord, StudyError> {
        let target = &data[&k.target];
        let owner = k.source.as_ref().unwrap_or(&k.target);
        let (pre_seed, model) = &models[&(owner.clone(), k.repeat)];
        let (seed, metrics) = match k.setting {
            Setting::FS | Setting::DT => (*pre_seed, evaluate(model, &target.test)),
            Setting::FT => {
                let job = finetune_job(owner, &k.target);
                let seed = job_seed(cfg.seed, &job, k.repeat);
                let tuned = finetune(model, &target.train, &target.val, &with_seed(&cfg.train, seed))
                    .map_err(|source| StudyError::Job { job: format!("{job} #{}", k.repeat), source })?;
                (seed, evaluate(&tuned, &target.test))
            }
        };
        let metrics = metrics.map_err(|source| StudyError::Job { job: k.to_string(), source })?;
        Ok(EvalRecord {
            setting: k.setting,
            source: k.source.clone(),
            target: k.target.clone(),
            repeat: k.repeat,
            seed,
            metrics,
        })
    };

    // The writer lives outside the pool so it never occupies a worker.
    let (eval_result, write_result) = std::thread::scope(|scope| {
        let writer_thread = scope.spawn(move || -> Result<usize, LedgerError> {
            let mut n = 0;
            for rec in rx {
                writer.append(&rec)?;
                n += 1;
            }
            Ok(n)
        });
        let eval_result = pending.par_iter().try_for_each_with(tx, |tx, k| {
            let rec = eval(k)?;
            tx.send(rec).map_err(|_| StudyError::Config("ledger writer stopped".into()))?;
            Ok::<_, StudyError>(())
        });
        (eval_result, writer_thread.join().expect("writer thread panicked"))
    });
    let written = write_result?;
    eval_result?;

    let ledger = RunLedger::read(&cfg.ledger_path)?;
    let remaining = ledger.pending()?.len();
    if remaining == 0 {
        ledger.write_canonical(&cfg.ledger_path)?;
    }
    Ok(StudyOutcome { pretrained: models.len(), written, remaining })
}
