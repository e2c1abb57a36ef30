//! Sleep-stage taxonomy.
//!
//! Source hypnograms may be scored under the older R&K rules (which split deep
//! sleep into N3 and N4 and carry MOVEMENT / UNKNOWN markers). Everything
//! downstream works on the five AASM classes, with a fixed ordinal order
//! `W, N1, N2, N3, REM` so confusion matrices and reports are byte-stable.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of harmonized sleep stages.
pub const NUM_STAGES: usize = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StageError {
    #[error("unknown stage name `{0}`")]
    UnknownName(String),
    #[error("stage ordinal {0} out of range")]
    BadOrdinal(u8),
    #[error("empty input")]
    EmptyInput,
    #[error("no epochs left after removing MOVEMENT/UNKNOWN")]
    EmptyAfterFilter,
    #[error("sequence contains no sleep period (only W)")]
    NoSleepPeriod,
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

/// Label as it appears in a source annotation, before harmonization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RawStageLabel {
    W,
    N1,
    N2,
    N3,
    N4,
    Rem,
    Movement,
    Unknown,
}

impl RawStageLabel {
    pub const ALL: [RawStageLabel; 8] = [
        RawStageLabel::W,
        RawStageLabel::N1,
        RawStageLabel::N2,
        RawStageLabel::N3,
        RawStageLabel::N4,
        RawStageLabel::Rem,
        RawStageLabel::Movement,
        RawStageLabel::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RawStageLabel::W => "W",
            RawStageLabel::N1 => "N1",
            RawStageLabel::N2 => "N2",
            RawStageLabel::N3 => "N3",
            RawStageLabel::N4 => "N4",
            RawStageLabel::Rem => "REM",
            RawStageLabel::Movement => "MOVEMENT",
            RawStageLabel::Unknown => "UNKNOWN",
        }
    }
}

impl fmt::Display for RawStageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RawStageLabel {
    type Err = StageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RawStageLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| StageError::UnknownName(s.to_string()))
    }
}

/// Harmonized AASM stage.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub enum StageLabel {
    W,
    N1,
    N2,
    N3,
    #[serde(rename = "REM")]
    Rem,
}

impl StageLabel {
    pub const ALL: [StageLabel; NUM_STAGES] = [
        StageLabel::W,
        StageLabel::N1,
        StageLabel::N2,
        StageLabel::N3,
        StageLabel::Rem,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(i: u8) -> Result<Self, StageError> {
        StageLabel::ALL
            .get(i as usize)
            .copied()
            .ok_or(StageError::BadOrdinal(i))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StageLabel::W => "W",
            StageLabel::N1 => "N1",
            StageLabel::N2 => "N2",
            StageLabel::N3 => "N3",
            StageLabel::Rem => "REM",
        }
    }
}

impl fmt::Display for StageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageLabel {
    type Err = StageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StageLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| StageError::UnknownName(s.to_string()))
    }
}

impl From<StageLabel> for RawStageLabel {
    fn from(s: StageLabel) -> Self {
        match s {
            StageLabel::W => RawStageLabel::W,
            StageLabel::N1 => RawStageLabel::N1,
            StageLabel::N2 => RawStageLabel::N2,
            StageLabel::N3 => RawStageLabel::N3,
            StageLabel::Rem => RawStageLabel::Rem,
        }
    }
}

/// Map an R&K or AASM label onto the five AASM classes.
///
/// N4 folds into N3. MOVEMENT and UNKNOWN have no class and yield `None`.
pub fn harmonize(label: RawStageLabel) -> Option<StageLabel> {
    match label {
        RawStageLabel::W => Some(StageLabel::W),
        RawStageLabel::N1 => Some(StageLabel::N1),
        RawStageLabel::N2 => Some(StageLabel::N2),
        RawStageLabel::N3 | RawStageLabel::N4 => Some(StageLabel::N3),
        RawStageLabel::Rem => Some(StageLabel::Rem),
        RawStageLabel::Movement | RawStageLabel::Unknown => None,
    }
}

/// Drop unscorable epochs (anywhere in the night) and harmonize the rest,
/// preserving order.
pub fn filter_epochs<E>(
    seq: impl IntoIterator<Item = (E, RawStageLabel)>,
) -> Result<Vec<(E, StageLabel)>, StageError> {
    let mut seen = false;
    let out: Vec<_> = seq
        .into_iter()
        .inspect(|_| seen = true)
        .filter_map(|(e, raw)| harmonize(raw).map(|s| (e, s)))
        .collect();
    if !seen {
        return Err(StageError::EmptyInput);
    }
    if out.is_empty() {
        return Err(StageError::EmptyAfterFilter);
    }
    Ok(out)
}

/// Truncate the leading and trailing wake runs to at most `keep_minutes`
/// each. Interior epochs are never touched.
pub fn trim_wake<E>(
    seq: Vec<(E, StageLabel)>,
    keep_minutes: f64,
    epoch_seconds: f64,
) -> Result<Vec<(E, StageLabel)>, StageError> {
    if !(epoch_seconds > 0.0) {
        return Err(StageError::InvalidParameter("epoch_seconds must be > 0"));
    }
    if !(keep_minutes >= 0.0) {
        return Err(StageError::InvalidParameter("keep_minutes must be >= 0"));
    }
    let keep = (keep_minutes * 60.0 / epoch_seconds).floor() as usize;

    let first_sleep = seq
        .iter()
        .position(|(_, s)| *s != StageLabel::W)
        .ok_or(StageError::NoSleepPeriod)?;
    // A non-W epoch exists, so rposition cannot fail.
    let last_sleep = seq.iter().rposition(|(_, s)| *s != StageLabel::W).unwrap();

    let start = first_sleep.saturating_sub(keep);
    let end = (last_sleep + 1 + keep).min(seq.len());
    Ok(seq.into_iter().skip(start).take(end - start).collect())
}

/// Per-stage epoch counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageDistribution {
    pub counts: [u64; NUM_STAGES],
    pub total: u64,
}

impl StageDistribution {
    pub fn from_counts(counts: [u64; NUM_STAGES]) -> Result<Self, StageError> {
        let total = counts.iter().sum();
        if total == 0 {
            return Err(StageError::EmptyInput);
        }
        Ok(StageDistribution { counts, total })
    }

    pub fn fraction(&self, stage: StageLabel) -> f64 {
        self.counts[stage.ordinal()] as f64 / self.total as f64
    }

    pub fn fractions(&self) -> [f64; NUM_STAGES] {
        StageLabel::ALL.map(|s| self.fraction(s))
    }
}

pub fn stage_distribution(labels: &[StageLabel]) -> Result<StageDistribution, StageError> {
    let mut counts = [0u64; NUM_STAGES];
    for l in labels {
        counts[l.ordinal()] += 1;
    }
    StageDistribution::from_counts(counts)
}
