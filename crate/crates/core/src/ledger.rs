//! Append-only evaluation ledger, one JSON object per line.
//!
//! The first line is a `meta` object describing the study (universe, seeds,
//! repeats). Every following line is a `record`. Keys are written in a fixed
//! order and every line carries `schema_version`. A completed ledger is
//! rewritten once with its records sorted by key, so the final bytes do not
//! depend on the order in which parallel jobs finished.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::MetricSet;
use crate::plan::{enumerate_pairs_with, ChannelSlot, PairingRule, PlanError, TransferPair};
use crate::scorer::TrainConfig;
use crate::synthgen::ChannelId;
use crate::transferscore::{EvalRecord, RecordKey, Setting};

pub const LEDGER_SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("ledger I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("ledger line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("ledger line {line}: unsupported schema_version {version}")]
    Version { line: usize, version: u32 },
    #[error("duplicate record {0}")]
    DuplicateKey(RecordKey),
    #[error("inconsistent record {0}")]
    Inconsistent(RecordKey),
    #[error("record {0} is outside the study plan")]
    OutsidePlan(RecordKey),
    #[error("existing ledger belongs to a different study: {0}")]
    MetaMismatch(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Study description stored on the first ledger line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerMeta {
    pub schema_version: u32,
    pub kind: String,
    pub tool_version: String,
    #[serde(default)]
    pub manifest_hash: Option<String>,
    #[serde(default)]
    pub study_seed: Option<u64>,
    pub repeats: u32,
    #[serde(default)]
    pub exhaustive: bool,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    pub universe: Vec<ChannelSlot>,
}

impl LedgerMeta {
    pub fn new(universe: Vec<ChannelSlot>, repeats: u32) -> Self {
        LedgerMeta {
            schema_version: LEDGER_SCHEMA_VERSION,
            kind: "meta".into(),
            tool_version: TOOL_VERSION.into(),
            manifest_hash: None,
            study_seed: None,
            repeats,
            exhaustive: false,
            train: None,
            universe,
        }
    }

    pub fn pairing_rule(&self) -> PairingRule {
        if self.exhaustive {
            PairingRule::Exhaustive
        } else {
            PairingRule::Standard
        }
    }

    pub fn pairs(&self) -> Result<Vec<TransferPair>, PlanError> {
        enumerate_pairs_with(&self.universe, self.pairing_rule())
    }

    /// Every record key the study must produce, in canonical order.
    pub fn expected_keys(&self) -> Result<Vec<RecordKey>, PlanError> {
        let pairs = self.pairs()?;
        let mut targets: Vec<ChannelId> = Vec::new();
        for p in &pairs {
            if !targets.contains(&p.target.id()) {
                targets.push(p.target.id());
            }
        }
        let mut keys = Vec::new();
        for repeat in 0..self.repeats {
            for t in &targets {
                keys.push(RecordKey { setting: Setting::FS, source: None, target: t.clone(), repeat });
            }
            for p in &pairs {
                for setting in [Setting::DT, Setting::FT] {
                    keys.push(RecordKey { setting, source: Some(p.source.id()), target: p.target.id(), repeat });
                }
            }
        }
        keys.sort();
        Ok(keys)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    schema_version: u32,
    kind: String,
    setting: Setting,
    source: Option<ChannelId>,
    target: ChannelId,
    repeat: u32,
    seed: u64,
    metrics: MetricSet,
}

#[derive(Deserialize)]
struct Probe {
    schema_version: u32,
    kind: String,
}

fn record_line(r: &EvalRecord) -> String {
    serde_json::to_string(&RecordLine {
        schema_version: LEDGER_SCHEMA_VERSION,
        kind: "record".into(),
        setting: r.setting,
        source: r.source.clone(),
        target: r.target.clone(),
        repeat: r.repeat,
        seed: r.seed,
        metrics: r.metrics,
    })
    .expect("record serializes")
}

fn meta_line(m: &LedgerMeta) -> String {
    serde_json::to_string(m).expect("meta serializes")
}

/// In-memory ledger snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLedger {
    pub meta: LedgerMeta,
    pub records: Vec<EvalRecord>,
}

impl RunLedger {
    pub fn new(meta: LedgerMeta) -> Self {
        RunLedger { meta, records: Vec::new() }
    }

    pub fn parse(text: &str) -> Result<Self, LedgerError> {
        let mut meta: Option<LedgerMeta> = None;
        let mut records = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let perr = |e: serde_json::Error| LedgerError::Parse { line: n, msg: e.to_string() };
            let probe: Probe = serde_json::from_str(line).map_err(perr)?;
            if probe.schema_version != LEDGER_SCHEMA_VERSION {
                return Err(LedgerError::Version { line: n, version: probe.schema_version });
            }
            match (probe.kind.as_str(), &meta) {
                ("meta", None) => meta = Some(serde_json::from_str(line).map_err(perr)?),
                ("meta", Some(_)) => {
                    return Err(LedgerError::Parse { line: n, msg: "second meta line".into() })
                }
                ("record", None) => {
                    return Err(LedgerError::Parse { line: n, msg: "record before meta line".into() })
                }
                ("record", Some(_)) => {
                    let r: RecordLine = serde_json::from_str(line).map_err(perr)?;
                    let rec = EvalRecord {
                        setting: r.setting,
                        source: r.source,
                        target: r.target,
                        repeat: r.repeat,
                        seed: r.seed,
                        metrics: r.metrics,
                    };
                    if !rec.is_consistent() {
                        return Err(LedgerError::Inconsistent(rec.key()));
                    }
                    if !seen.insert(canonical_key(&rec)) {
                        return Err(LedgerError::DuplicateKey(rec.key()));
                    }
                    records.push(rec);
                }
                (other, _) => {
                    return Err(LedgerError::Parse { line: n, msg: format!("unknown kind `{other}`") })
                }
            }
        }
        let meta = meta.ok_or(LedgerError::Parse { line: 1, msg: "missing meta line".into() })?;
        Ok(RunLedger { meta, records })
    }

    pub fn read(path: &Path) -> Result<Self, LedgerError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Serialized form with records in canonical key order.
    pub fn to_canonical_string(&self) -> String {
        let mut records: Vec<&EvalRecord> = self.records.iter().collect();
        records.sort_by_key(|r| canonical_key(r));
        let mut out = meta_line(&self.meta);
        out.push('\n');
        for r in records {
            out.push_str(&record_line(r));
            out.push('\n');
        }
        out
    }

    /// Write the canonical form through a temporary file and rename.
    pub fn write_canonical(&self, path: &Path) -> Result<(), LedgerError> {
        let tmp = tmp_path(path);
        fs::write(&tmp, self.to_canonical_string())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn keys(&self) -> BTreeSet<RecordKey> {
        self.records.iter().map(canonical_key).collect()
    }

    /// Expected keys that are not yet present.
    pub fn pending(&self) -> Result<Vec<RecordKey>, LedgerError> {
        let have = self.keys();
        Ok(self.meta.expected_keys()?.into_iter().filter(|k| !have.contains(k)).collect())
    }

    /// Reject records that the plan does not call for.
    pub fn check_within_plan(&self) -> Result<(), LedgerError> {
        let expected: BTreeSet<RecordKey> = self.meta.expected_keys()?.into_iter().collect();
        for r in &self.records {
            let k = canonical_key(r);
            if !expected.contains(&k) {
                return Err(LedgerError::OutsidePlan(k));
            }
        }
        Ok(())
    }
}

/// FS records are keyed without a source, whichever way they were written.
pub fn canonical_key(r: &EvalRecord) -> RecordKey {
    let mut k = r.key();
    if k.setting == Setting::FS {
        k.source = None;
    }
    k
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Single writer appending records to a ledger file.
pub struct LedgerWriter {
    out: BufWriter<File>,
    seen: BTreeSet<RecordKey>,
}

impl LedgerWriter {
    /// Open `path` for appending. A missing file is created with `meta` as
    /// its first line; an existing one must carry the same meta. An
    /// unterminated last line is left over from an interrupted append and is
    /// dropped.
    pub fn open(path: &Path, meta: &LedgerMeta) -> Result<(Self, RunLedger), LedgerError> {
        if path.exists() {
            drop_torn_tail(path)?;
        }
        let ledger = if path.exists() && fs::metadata(path)?.len() > 0 {
            let existing = RunLedger::read(path)?;
            if existing.meta != *meta {
                return Err(LedgerError::MetaMismatch(describe_mismatch(&existing.meta, meta)));
            }
            existing.check_within_plan()?;
            existing
        } else {
            fs::write(path, format!("{}\n", meta_line(meta)))?;
            RunLedger::new(meta.clone())
        };
        let file = OpenOptions::new().append(true).open(path)?;
        let writer = LedgerWriter { out: BufWriter::new(file), seen: ledger.keys() };
        Ok((writer, ledger))
    }

    pub fn append(&mut self, record: &EvalRecord) -> Result<(), LedgerError> {
        if !record.is_consistent() {
            return Err(LedgerError::Inconsistent(record.key()));
        }
        let key = canonical_key(record);
        if !self.seen.insert(key.clone()) {
            return Err(LedgerError::DuplicateKey(key));
        }
        writeln!(self.out, "{}", record_line(record))?;
        self.out.flush()?;
        Ok(())
    }
}

fn drop_torn_tail(path: &Path) -> Result<(), LedgerError> {
    let bytes = fs::read(path)?;
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
    Ok(())
}

fn describe_mismatch(a: &LedgerMeta, b: &LedgerMeta) -> String {
    let mut diffs = Vec::new();
    if a.manifest_hash != b.manifest_hash {
        diffs.push("manifest");
    }
    if a.study_seed != b.study_seed {
        diffs.push("seed");
    }
    if a.repeats != b.repeats {
        diffs.push("repeats");
    }
    if a.train != b.train {
        diffs.push("training config");
    }
    if a.tool_version != b.tool_version {
        diffs.push("tool version");
    }
    if diffs.is_empty() {
        diffs.push("universe");
    }
    format!("{} differ", diffs.join(", "))
}
