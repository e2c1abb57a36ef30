//! Impact and transferability analysis over a set of evaluation records.
//!
//! Every computation here reads macro-F1 values `p(model, dataset)` only, so
//! it applies equally to the desk-scale synthetic study and to ledgers of
//! results measured elsewhere. Repeated runs are averaged into one value per
//! (setting, source, target) before any ratio is taken.
//!
//! * **Relative difference** `r = (p_target_own / p_source_on_target - 1) * 100`,
//!   positive when the transferred model is worse than the target's own.
//! * **Pairwise comparison** `h[i][j] = (p_i - p_j) / p_target * 100` over the
//!   fine-tuned sources of one target, then mapped to a positive reciprocal
//!   matrix with a dead band of `alpha` percent.
//! * **Transferability** is the principal eigenvector of that matrix, stacked
//!   over targets into `W`; column means of `W` give each source's
//!   generalization score.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::MetricSet;
use crate::plan::{GroupKey, TransferPair};
use crate::synthgen::ChannelId;

/// Default dead band (percent) below which two sources count as equal.
pub const DEFAULT_ALPHA: f64 = 1.0;
const ANTISYMMETRY_TOL: f64 = 1e-9;
const RECIPROCITY_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("division by zero: {0}")]
    DivisionByZero(String),
    #[error("missing records: {}", .0.iter().map(|k| k.to_string()).collect::<Vec<_>>().join("; "))]
    MissingRecord(Vec<RecordKey>),
    #[error("raw matrix is not antisymmetric at ({i}, {j})")]
    NotAntisymmetric { i: usize, j: usize },
    #[error("matrix entry ({i}, {j}) is not a positive finite number")]
    NonPositiveEntry { i: usize, j: usize },
    #[error("matrix is not reciprocal at ({i}, {j})")]
    NotReciprocal { i: usize, j: usize },
    #[error("matrix is not square")]
    NotSquare,
    #[error("empty matrix")]
    EmptyMatrix,
}

/// Evaluation setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Setting {
    /// Target's own model on its test set.
    FS,
    /// Source model applied to the target test set unchanged.
    DT,
    /// Source model fine-tuned on the target, then applied.
    FT,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::FS => "FS",
            Setting::DT => "DT",
            Setting::FT => "FT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordKey {
    pub setting: Setting,
    pub source: Option<ChannelId>,
    pub target: ChannelId,
    pub repeat: u32,
}

impl fmt::Display for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.source {
            Some(s) => write!(f, "{} {} -> {} #{}", self.setting, s, self.target, self.repeat),
            None => write!(f, "{} {} #{}", self.setting, self.target, self.repeat),
        }
    }
}

/// One measured performance point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub setting: Setting,
    pub source: Option<ChannelId>,
    pub target: ChannelId,
    pub repeat: u32,
    pub seed: u64,
    pub metrics: MetricSet,
}

impl EvalRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            setting: self.setting,
            source: self.source.clone(),
            target: self.target.clone(),
            repeat: self.repeat,
        }
    }

    /// FS records carry no source (or the target itself); transfers must name
    /// a different source.
    pub fn is_consistent(&self) -> bool {
        match (self.setting, &self.source) {
            (Setting::FS, None) => true,
            (Setting::FS, Some(s)) => *s == self.target,
            (_, Some(s)) => *s != self.target,
            (_, None) => false,
        }
    }
}

/// `(p_tt / p_st - 1) * 100`.
pub fn relative_diff(p_tt: f64, p_st: f64) -> Result<f64, ScoreError> {
    if p_st == 0.0 {
        return Err(ScoreError::DivisionByZero("source-on-target performance is 0".into()));
    }
    Ok((p_tt / p_st - 1.0) * 100.0)
}

/// Repeat-averaged lookups over a record list.
struct RecordIndex<'a> {
    by_key: HashMap<RecordKey, &'a EvalRecord>,
    repeats: BTreeSet<u32>,
}

impl<'a> RecordIndex<'a> {
    fn new(ledger: &'a [EvalRecord]) -> Self {
        let mut by_key = HashMap::new();
        let mut repeats = BTreeSet::new();
        for r in ledger {
            // FS may be stored with source = target; index it without.
            let mut key = r.key();
            if key.setting == Setting::FS {
                key.source = None;
            }
            repeats.insert(r.repeat);
            by_key.insert(key, r);
        }
        RecordIndex { by_key, repeats }
    }

    fn keys(&self, setting: Setting, source: Option<&ChannelId>, target: &ChannelId) -> Vec<RecordKey> {
        self.repeats
            .iter()
            .map(|&repeat| RecordKey {
                setting,
                source: source.cloned(),
                target: target.clone(),
                repeat,
            })
            .collect()
    }

    /// All per-repeat records for a key, or the list of absent keys.
    fn get(
        &self,
        setting: Setting,
        source: Option<&ChannelId>,
        target: &ChannelId,
    ) -> Result<Vec<&'a EvalRecord>, Vec<RecordKey>> {
        let mut found = Vec::new();
        let mut missing = Vec::new();
        for k in self.keys(setting, source, target) {
            match self.by_key.get(&k) {
                Some(r) => found.push(*r),
                None => missing.push(k),
            }
        }
        if missing.is_empty() {
            Ok(found)
        } else {
            Err(missing)
        }
    }

    fn has_any(&self, setting: Setting, source: Option<&ChannelId>, target: &ChannelId) -> bool {
        self.keys(setting, source, target).iter().any(|k| self.by_key.contains_key(k))
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

fn mean_mf1(records: &[&EvalRecord]) -> f64 {
    mean(records.iter().map(|r| r.metrics.mf1))
}

/// All records a plan requires: FS per target and DT/FT per pair, for every
/// repeat index seen in the ledger. Returns the keys that are absent.
pub fn missing_records(ledger: &[EvalRecord], pairs: &[TransferPair], with_ft: bool) -> Vec<RecordKey> {
    let idx = RecordIndex::new(ledger);
    let mut missing = Vec::new();
    let mut targets = BTreeSet::new();
    for p in pairs {
        targets.insert(p.target.id());
    }
    for t in &targets {
        if let Err(m) = idx.get(Setting::FS, None, t) {
            missing.extend(m);
        }
    }
    let mut settings = vec![Setting::DT];
    if with_ft {
        settings.push(Setting::FT);
    }
    for p in pairs {
        for &s in &settings {
            if let Err(m) = idx.get(s, Some(&p.source.id()), &p.target.id()) {
                missing.extend(m);
            }
        }
    }
    missing.sort();
    missing.dedup();
    missing
}

/// Averages for one group of transfer pairs. Scores are fractions; `r` is a
/// percentage. Empty groups carry no values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImpactRow {
    pub group: GroupKey,
    pub n_pairs: usize,
    pub fs: Option<(f64, f64)>,
    pub dt: Option<(f64, f64)>,
    pub ft: Option<(f64, f64)>,
    pub r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImpactReport {
    pub rows: Vec<ImpactRow>,
}

impl ImpactReport {
    pub fn row(&self, group: GroupKey) -> Option<&ImpactRow> {
        self.rows.iter().find(|r| r.group == group)
    }
}

/// Per-pair relative differences averaged within each group.
///
/// `r` is taken per pair on repeat-averaged MF1 and then averaged over the
/// group's pairs. ACC/MF1 columns average the per-pair, per-repeat values.
/// FT columns are filled only when the ledger holds FT records for the group.
pub fn impact_report(
    ledger: &[EvalRecord],
    groups: &BTreeMap<GroupKey, Vec<TransferPair>>,
) -> Result<ImpactReport, ScoreError> {
    let idx = RecordIndex::new(ledger);
    let mut rows = Vec::new();
    let mut missing = Vec::new();

    for (&group, pairs) in groups {
        if pairs.is_empty() {
            rows.push(ImpactRow { group, n_pairs: 0, fs: None, dt: None, ft: None, r: None });
            continue;
        }
        let with_ft = pairs
            .iter()
            .any(|p| idx.has_any(Setting::FT, Some(&p.source.id()), &p.target.id()));

        let mut fs_vals = Vec::new();
        let mut dt_vals = Vec::new();
        let mut ft_vals = Vec::new();
        let mut r_vals = Vec::new();
        for p in pairs {
            let (s, t) = (p.source.id(), p.target.id());
            let fs = idx.get(Setting::FS, None, &t);
            let dt = idx.get(Setting::DT, Some(&s), &t);
            let ft = if with_ft { idx.get(Setting::FT, Some(&s), &t).map(Some) } else { Ok(None) };
            match (fs, dt, ft) {
                (Ok(fs), Ok(dt), Ok(ft)) => {
                    r_vals.push(relative_diff(mean_mf1(&fs), mean_mf1(&dt))?);
                    fs_vals.extend(fs.iter().map(|r| r.metrics));
                    dt_vals.extend(dt.iter().map(|r| r.metrics));
                    if let Some(ft) = ft {
                        ft_vals.extend(ft.iter().map(|r| r.metrics));
                    }
                }
                (fs, dt, ft) => {
                    missing.extend(fs.err().unwrap_or_default());
                    missing.extend(dt.err().unwrap_or_default());
                    missing.extend(ft.err().unwrap_or_default());
                }
            }
        }
        let avg = |v: &[MetricSet]| {
            (!v.is_empty()).then(|| (mean(v.iter().map(|m| m.acc)), mean(v.iter().map(|m| m.mf1))))
        };
        rows.push(ImpactRow {
            group,
            n_pairs: pairs.len(),
            fs: avg(&fs_vals),
            dt: avg(&dt_vals),
            ft: avg(&ft_vals),
            r: (!r_vals.is_empty()).then(|| mean(r_vals.iter().copied())),
        });
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(ScoreError::MissingRecord(missing));
    }
    Ok(ImpactReport { rows })
}

/// Square matrix as nested rows.
pub type Matrix = Vec<Vec<f64>>;

/// Comparison matrix of the sources of one target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseMatrix {
    pub target: ChannelId,
    pub sources: Vec<ChannelId>,
    /// Percent differences, antisymmetric with a zero diagonal.
    pub raw: Matrix,
    /// Positive reciprocal form.
    pub normalized: Matrix,
}

/// Raw pairwise differences for `target` over `sources`, from repeat-averaged
/// FT and FS macro-F1.
pub fn pairwise_raw(ledger: &[EvalRecord], target: &ChannelId, sources: &[ChannelId]) -> Result<Matrix, ScoreError> {
    let idx = RecordIndex::new(ledger);
    let mut missing = Vec::new();
    let p_t = match idx.get(Setting::FS, None, target) {
        Ok(r) => Some(mean_mf1(&r)),
        Err(m) => {
            missing.extend(m);
            None
        }
    };
    let p: Vec<Option<f64>> = sources
        .iter()
        .map(|s| match idx.get(Setting::FT, Some(s), target) {
            Ok(r) => Some(mean_mf1(&r)),
            Err(m) => {
                missing.extend(m);
                None
            }
        })
        .collect();
    if !missing.is_empty() {
        return Err(ScoreError::MissingRecord(missing));
    }
    let p_t = p_t.expect("checked above");
    if p_t == 0.0 {
        return Err(ScoreError::DivisionByZero(format!("FS performance of {target} is 0")));
    }
    let p: Vec<f64> = p.into_iter().map(|v| v.expect("checked above")).collect();
    Ok(p.iter()
        .map(|pi| p.iter().map(|pj| (pi - pj) / p_t * 100.0).collect())
        .collect())
}

fn check_square(m: &Matrix) -> Result<usize, ScoreError> {
    let n = m.len();
    if n == 0 {
        return Err(ScoreError::EmptyMatrix);
    }
    if m.iter().any(|row| row.len() != n) {
        return Err(ScoreError::NotSquare);
    }
    Ok(n)
}

/// Map raw percent differences to a positive reciprocal matrix.
///
/// Differences above `alpha` are kept, those below `-alpha` become the
/// reciprocal of the mirrored entry, and everything inside the dead band
/// (and the diagonal) becomes 1.
pub fn normalize(raw: &Matrix, alpha: f64) -> Result<Matrix, ScoreError> {
    let n = check_square(raw)?;
    for i in 0..n {
        for j in i..n {
            let (a, b) = (raw[i][j], raw[j][i]);
            let tol = ANTISYMMETRY_TOL * a.abs().max(b.abs()).max(1.0);
            if !(a + b).is_finite() || (a + b).abs() > tol {
                return Err(ScoreError::NotAntisymmetric { i, j });
            }
        }
    }
    Ok((0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let h = raw[i][j];
                    if i == j {
                        1.0
                    } else if h > alpha {
                        h
                    } else if h < -alpha {
                        1.0 / raw[j][i].abs()
                    } else {
                        1.0
                    }
                })
                .collect()
        })
        .collect())
}

fn check_positive_reciprocal(m: &Matrix) -> Result<usize, ScoreError> {
    let n = check_square(m)?;
    for i in 0..n {
        for j in 0..n {
            let v = m[i][j];
            if !(v > 0.0 && v.is_finite()) {
                return Err(ScoreError::NonPositiveEntry { i, j });
            }
        }
    }
    for i in 0..n {
        for j in i..n {
            if (m[i][j] * m[j][i] - 1.0).abs() > RECIPROCITY_TOL {
                return Err(ScoreError::NotReciprocal { i, j });
            }
        }
    }
    Ok(n)
}

/// How the principal eigenvector is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EigenMethod {
    /// Average of the column-normalized matrix.
    #[default]
    ColumnAverage,
    /// Power iteration to convergence.
    PowerIteration,
}

/// Approximate principal eigenvector: normalize each column to sum 1, then
/// average across each row. Exact for consistent matrices.
pub fn approx_eigenvector(m: &Matrix) -> Result<Vec<f64>, ScoreError> {
    let n = check_positive_reciprocal(m)?;
    let col_sums: Vec<f64> = (0..n).map(|j| (0..n).map(|k| m[k][j]).sum()).collect();
    let v: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| m[i][j] / col_sums[j]).sum::<f64>() / n as f64)
        .collect();
    Ok(unit_sum(v))
}

/// Principal eigenvector by power iteration, scaled to sum 1.
pub fn power_eigenvector(m: &Matrix) -> Result<Vec<f64>, ScoreError> {
    let n = check_positive_reciprocal(m)?;
    let mut v = vec![1.0 / n as f64; n];
    for _ in 0..10_000 {
        let next = unit_sum((0..n).map(|i| (0..n).map(|j| m[i][j] * v[j]).sum()).collect());
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < 1e-15 {
            break;
        }
    }
    Ok(v)
}

pub fn eigenvector(m: &Matrix, method: EigenMethod) -> Result<Vec<f64>, ScoreError> {
    match method {
        EigenMethod::ColumnAverage => approx_eigenvector(m),
        EigenMethod::PowerIteration => power_eigenvector(m),
    }
}

fn unit_sum(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// Stacked per-target eigenvectors. `entries[t][s]` is `None` where source
/// `s` is not a feasible source for target `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferabilityMatrix {
    pub targets: Vec<ChannelId>,
    pub sources: Vec<ChannelId>,
    pub entries: Vec<Vec<Option<f64>>>,
}

impl TransferabilityMatrix {
    pub fn get(&self, target: &ChannelId, source: &ChannelId) -> Option<f64> {
        let t = self.targets.iter().position(|x| x == target)?;
        let s = self.sources.iter().position(|x| x == source)?;
        self.entries[t][s]
    }

    pub fn row(&self, target: &ChannelId) -> Option<&[Option<f64>]> {
        let t = self.targets.iter().position(|x| x == target)?;
        Some(&self.entries[t])
    }
}

/// Transferability of every feasible source to every target.
///
/// Targets appear in pair order; `columns` fixes the source order (sources
/// not listed there are appended in pair order).
pub fn build_w(
    ledger: &[EvalRecord],
    pairs: &[TransferPair],
    columns: &[ChannelId],
    alpha: f64,
    method: EigenMethod,
) -> Result<(TransferabilityMatrix, Vec<PairwiseMatrix>), ScoreError> {
    let mut targets: Vec<ChannelId> = Vec::new();
    let mut sources: Vec<ChannelId> = columns.to_vec();
    for p in pairs {
        if !targets.contains(&p.target.id()) {
            targets.push(p.target.id());
        }
        if !sources.contains(&p.source.id()) {
            sources.push(p.source.id());
        }
    }
    // Drop listed columns that no pair uses.
    sources.retain(|s| pairs.iter().any(|p| p.source.id() == *s));

    let mut entries = vec![vec![None; sources.len()]; targets.len()];
    let mut matrices = Vec::new();
    let mut missing = Vec::new();
    for (ti, target) in targets.iter().enumerate() {
        let row_sources: Vec<ChannelId> = pairs
            .iter()
            .filter(|p| p.target.id() == *target)
            .map(|p| p.source.id())
            .collect();
        let raw = match pairwise_raw(ledger, target, &row_sources) {
            Ok(raw) => raw,
            Err(ScoreError::MissingRecord(m)) => {
                missing.extend(m);
                continue;
            }
            Err(e) => return Err(e),
        };
        let normalized = normalize(&raw, alpha)?;
        let weights = eigenvector(&normalized, method)?;
        for (s, w) in row_sources.iter().zip(&weights) {
            let si = sources.iter().position(|x| x == s).expect("column registered");
            entries[ti][si] = Some(*w);
        }
        matrices.push(PairwiseMatrix {
            target: target.clone(),
            sources: row_sources,
            raw,
            normalized,
        });
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(ScoreError::MissingRecord(missing));
    }
    Ok((TransferabilityMatrix { targets, sources, entries }, matrices))
}

/// Dead-band values swept by [`alpha_sensitivity`] by default.
pub const SENSITIVITY_ALPHAS: [f64; 3] = [0.5, 1.0, 2.0];

/// `W` rebuilt under each dead band in `alphas`.
pub fn alpha_sensitivity(
    ledger: &[EvalRecord],
    pairs: &[TransferPair],
    columns: &[ChannelId],
    alphas: &[f64],
    method: EigenMethod,
) -> Result<Vec<(f64, TransferabilityMatrix)>, ScoreError> {
    alphas
        .iter()
        .map(|&a| build_w(ledger, pairs, columns, a, method).map(|(w, _)| (a, w)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Generalization {
    pub source: ChannelId,
    pub value: f64,
    pub n_targets: usize,
}

/// Mean of each source column of `W` over the targets where it is present.
pub fn generalization_vector(w: &TransferabilityMatrix) -> Result<Vec<Generalization>, ScoreError> {
    if w.targets.is_empty() || w.sources.is_empty() {
        return Err(ScoreError::EmptyMatrix);
    }
    let out: Vec<Generalization> = w
        .sources
        .iter()
        .enumerate()
        .filter_map(|(j, source)| {
            let col: Vec<f64> = w.entries.iter().filter_map(|row| row[j]).collect();
            (!col.is_empty()).then(|| Generalization {
                source: source.clone(),
                value: mean(col.iter().copied()),
                n_targets: col.len(),
            })
        })
        .collect();
    if out.is_empty() {
        return Err(ScoreError::EmptyMatrix);
    }
    Ok(out)
}
