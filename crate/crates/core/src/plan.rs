//! Transfer-pair enumeration and grouping.
//!
//! A universe is a list of [`ChannelSlot`]s. A slot is one electrode position
//! of a dataset, optionally with an alternate electrode over the same brain
//! area (F3 for F4, C3 for C4). Every concrete channel of a source-usable slot
//! is pre-trained separately. When a slot's primary channel is itself the
//! target, the alternate stands in as the source, since the two record the
//! same subjects in the same environment. Slots without an alternate have no
//! such stand-in and that pair is skipped.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synthgen::{ChannelId, Condition, DatasetDescriptor, SynthError};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("universe has no usable channels")]
    EmptyUniverse,
    #[error("slot {slot}: alternate `{alternate}` is not in the same brain area")]
    AlternateAreaMismatch { slot: ChannelId, alternate: String },
    #[error("channel {0} appears twice in the universe")]
    DuplicateChannel(ChannelId),
    #[error(transparent)]
    Descriptor(#[from] SynthError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSlot {
    /// Descriptor of the primary channel.
    pub descriptor: DatasetDescriptor,
    pub alternate_channel: Option<String>,
    pub usable_as_source: bool,
    pub usable_as_target: bool,
}

impl ChannelSlot {
    pub fn alternate(&self) -> Option<DatasetDescriptor> {
        self.alternate_channel.as_deref().map(|c| self.descriptor.with_channel(c))
    }

    /// Primary first, then the alternate.
    pub fn channels(&self) -> impl Iterator<Item = DatasetDescriptor> + '_ {
        std::iter::once(self.descriptor.clone()).chain(self.alternate())
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        self.descriptor.validate()?;
        if let Some(alt) = self.alternate() {
            if alt.area()? != self.descriptor.area()? {
                return Err(PlanError::AlternateAreaMismatch {
                    slot: self.descriptor.id(),
                    alternate: alt.channel,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiffFlags {
    pub channel_diff: bool,
    pub env_diff: bool,
    pub cond_diff: bool,
}

impl DiffFlags {
    pub fn between(source: &DatasetDescriptor, target: &DatasetDescriptor) -> Result<Self, PlanError> {
        Ok(DiffFlags {
            channel_diff: source.area()? != target.area()?,
            env_diff: source.environment_id != target.environment_id,
            cond_diff: source.condition != target.condition,
        })
    }

    pub fn group(&self) -> GroupKey {
        GroupKey {
            env_diff: self.env_diff,
            channel_diff: self.channel_diff,
            cond_diff: self.cond_diff,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferPair {
    pub source: DatasetDescriptor,
    pub target: DatasetDescriptor,
    pub diff_flags: DiffFlags,
}

impl TransferPair {
    pub fn new(source: DatasetDescriptor, target: DatasetDescriptor) -> Result<Self, PlanError> {
        let diff_flags = DiffFlags::between(&source, &target)?;
        Ok(TransferPair {
            source,
            target,
            diff_flags,
        })
    }

    pub fn group(&self) -> GroupKey {
        self.diff_flags.group()
    }
}

/// Which characteristics differ between source and target. Ordered
/// environment, channel, condition, with "same" before "different".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub env_diff: bool,
    pub channel_diff: bool,
    pub cond_diff: bool,
}

impl GroupKey {
    pub const ALL: [GroupKey; 8] = {
        let mut all = [GroupKey { env_diff: false, channel_diff: false, cond_diff: false }; 8];
        let mut i = 0;
        while i < 8 {
            all[i] = GroupKey {
                env_diff: i & 4 != 0,
                channel_diff: i & 2 != 0,
                cond_diff: i & 1 != 0,
            };
            i += 1;
        }
        all
    };

    pub fn new(env_diff: bool, channel_diff: bool, cond_diff: bool) -> Self {
        GroupKey {
            env_diff,
            channel_diff,
            cond_diff,
        }
    }
}

fn word(diff: bool) -> &'static str {
    if diff {
        "different"
    } else {
        "same"
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "environment {}, channels {}, conditions {}",
            word(self.env_diff),
            word(self.channel_diff),
            word(self.cond_diff)
        )
    }
}

/// How sources are paired with targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairingRule {
    /// Alternates only stand in for their own primary channel.
    #[default]
    Standard,
    /// Every concrete source channel with every target, except itself.
    Exhaustive,
}

fn check_universe(universe: &[ChannelSlot]) -> Result<(), PlanError> {
    if !universe.iter().any(|s| s.usable_as_source || s.usable_as_target) {
        return Err(PlanError::EmptyUniverse);
    }
    let mut seen = std::collections::HashSet::new();
    for slot in universe {
        slot.validate()?;
        for d in slot.channels() {
            if !seen.insert(d.id()) {
                return Err(PlanError::DuplicateChannel(d.id()));
            }
        }
    }
    Ok(())
}

/// One entry per concrete channel that gets its own pre-trained model.
pub fn enumerate_sources(universe: &[ChannelSlot]) -> Result<Vec<DatasetDescriptor>, PlanError> {
    check_universe(universe)?;
    Ok(universe
        .iter()
        .filter(|s| s.usable_as_source)
        .flat_map(|s| s.channels())
        .collect())
}

pub fn enumerate_targets(universe: &[ChannelSlot]) -> Result<Vec<DatasetDescriptor>, PlanError> {
    check_universe(universe)?;
    Ok(universe
        .iter()
        .filter(|s| s.usable_as_target)
        .map(|s| s.descriptor.clone())
        .collect())
}

pub fn enumerate_pairs(universe: &[ChannelSlot]) -> Result<Vec<TransferPair>, PlanError> {
    enumerate_pairs_with(universe, PairingRule::Standard)
}

/// Pairs ordered by target, then by source in universe order.
pub fn enumerate_pairs_with(universe: &[ChannelSlot], rule: PairingRule) -> Result<Vec<TransferPair>, PlanError> {
    let targets = enumerate_targets(universe)?;
    let mut pairs = Vec::new();
    for target in &targets {
        for slot in universe.iter().filter(|s| s.usable_as_source) {
            let candidates: Vec<DatasetDescriptor> = match rule {
                PairingRule::Exhaustive => slot.channels().collect(),
                PairingRule::Standard => {
                    let own_slot = slot.descriptor.id() == target.id();
                    if own_slot {
                        slot.alternate().into_iter().collect()
                    } else {
                        vec![slot.descriptor.clone()]
                    }
                }
            };
            for source in candidates {
                if source.id() != target.id() {
                    pairs.push(TransferPair::new(source, target.clone())?);
                }
            }
        }
    }
    Ok(pairs)
}

/// Partition pairs by [`GroupKey`]; all eight keys are present, possibly
/// with empty lists.
pub fn group_pairs(pairs: &[TransferPair]) -> BTreeMap<GroupKey, Vec<TransferPair>> {
    let mut groups: BTreeMap<GroupKey, Vec<TransferPair>> = GroupKey::ALL.iter().map(|k| (*k, Vec::new())).collect();
    for p in pairs {
        groups.get_mut(&p.group()).expect("all keys present").push(p.clone());
    }
    groups
}

/// Counts reported by `verify-plan`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanSummary {
    pub n_sources: usize,
    pub n_targets: usize,
    pub n_pairs: usize,
    pub sources_per_target: Vec<(ChannelId, usize)>,
    pub group_sizes: Vec<(GroupKey, usize)>,
    pub empty_groups: Vec<GroupKey>,
}

pub fn summarize(universe: &[ChannelSlot], rule: PairingRule) -> Result<PlanSummary, PlanError> {
    let sources = enumerate_sources(universe)?;
    let targets = enumerate_targets(universe)?;
    let pairs = enumerate_pairs_with(universe, rule)?;
    let sources_per_target = targets
        .iter()
        .map(|t| (t.id(), pairs.iter().filter(|p| p.target.id() == t.id()).count()))
        .collect();
    let groups = group_pairs(&pairs);
    Ok(PlanSummary {
        n_sources: sources.len(),
        n_targets: targets.len(),
        n_pairs: pairs.len(),
        sources_per_target,
        group_sizes: groups.iter().map(|(k, v)| (*k, v.len())).collect(),
        empty_groups: groups.iter().filter(|(_, v)| v.is_empty()).map(|(k, _)| *k).collect(),
    })
}

impl fmt::Display for PlanSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sources: {}", self.n_sources)?;
        writeln!(f, "targets: {}", self.n_targets)?;
        writeln!(f, "pairs:   {}", self.n_pairs)?;
        for (t, n) in &self.sources_per_target {
            writeln!(f, "  {t}: {n} sources")?;
        }
        writeln!(f, "groups:")?;
        for (k, n) in &self.group_sizes {
            writeln!(f, "  {k}: {n}")?;
        }
        if self.empty_groups.is_empty() {
            writeln!(f, "empty groups: none")
        } else {
            writeln!(f, "empty groups:")?;
            for k in &self.empty_groups {
                writeln!(f, "  {k}")?;
            }
            Ok(())
        }
    }
}

/// The six single-channel datasets of the reference study, with their
/// source/target channel inventory. MASS subsets were recorded in different
/// environments; the two SHHS subsets share one.
pub fn reference_universe() -> Vec<ChannelSlot> {
    struct Row {
        id: &'static str,
        env: &'static str,
        cond: Condition,
        rate: u32,
        slots: &'static [(&'static str, Option<&'static str>, bool)],
    }
    const FC_PZ_O2: &[(&str, Option<&str>, bool)] =
        &[("F4", Some("F3"), true), ("C4", Some("C3"), true), ("Pz", None, false), ("O2", None, false)];
    let rows = [
        Row { id: "MASS-SS1", env: "MASS-SS1", cond: Condition::Healthy, rate: 256, slots: FC_PZ_O2 },
        Row { id: "MASS-SS3", env: "MASS-SS3", cond: Condition::Healthy, rate: 256, slots: FC_PZ_O2 },
        Row {
            id: "Sleep-EDF-SC",
            env: "Sleep-EDF-SC",
            cond: Condition::Healthy,
            rate: 100,
            slots: &[("Fpz-Cz", None, true), ("Pz-Oz", None, false)],
        },
        Row {
            id: "ISRUC-SG1",
            env: "ISRUC-SG1",
            cond: Condition::Apnea,
            rate: 200,
            slots: &[("F4", Some("F3"), true), ("C4", Some("C3"), true), ("O2", None, false)],
        },
        Row { id: "SHHS1-Normal", env: "SHHS1", cond: Condition::Healthy, rate: 125, slots: &[("C4", Some("C3"), true)] },
        Row { id: "SHHS1-OSA", env: "SHHS1", cond: Condition::Apnea, rate: 125, slots: &[("C4", Some("C3"), true)] },
    ];
    rows.iter()
        .flat_map(|r| {
            r.slots.iter().map(move |(primary, alt, target)| ChannelSlot {
                descriptor: DatasetDescriptor {
                    dataset_id: r.id.into(),
                    environment_id: r.env.into(),
                    condition: r.cond,
                    channel: (*primary).into(),
                    sampling_rate_hz: r.rate,
                    epoch_seconds: 30,
                },
                alternate_channel: alt.map(String::from),
                usable_as_source: true,
                usable_as_target: *target,
            })
        })
        .collect()
}
