//! Study manifests: the dataset universe plus generation and training
//! settings, stored as JSON.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "gen_params": { "n_subjects": 12, "epochs_per_subject": 400 },
//!   "datasets": [
//!     { "id": "SHHS1-OSA", "env": "SHHS1", "condition": "Apnea",
//!       "rate_hz": 125, "channels": [
//!         { "primary": "C4", "alternate": "C3", "source": true, "target": true } ] }
//!   ]
//! }
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::{ChannelSlot, PairingRule, PlanError};
use crate::scorer::TrainConfig;
use crate::seeding::sha256_hex;
use crate::synthgen::{Condition, DatasetDescriptor, GenParams};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported manifest schema_version {0}")]
    Version(u32),
    #[error("invalid manifest: {0}")]
    Invalid(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelEntry {
    pub primary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternate: Option<String>,
    #[serde(default = "yes")]
    pub source: bool,
    #[serde(default)]
    pub target: bool,
}

fn yes() -> bool {
    true
}

fn thirty() -> u32 {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub id: String,
    /// Recording environment; defaults to the dataset id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<String>,
    pub condition: Condition,
    pub rate_hz: u32,
    #[serde(default = "thirty")]
    pub epoch_seconds: u32,
    /// Keep at most this many minutes of wake around the sleep period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trim_wake_minutes: Option<f64>,
    pub channels: Vec<ChannelEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    #[serde(default)]
    pub gen_params: GenParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    /// Pair every source with every target instead of the standard rule.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub exhaustive: bool,
    pub datasets: Vec<DatasetEntry>,
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self, ManifestError> {
        let m: Manifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// SHA-256 of the canonical JSON form, independent of source formatting.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("manifest serializes").as_bytes())
    }

    pub fn pairing_rule(&self) -> PairingRule {
        if self.exhaustive {
            PairingRule::Exhaustive
        } else {
            PairingRule::Standard
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.clone().unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(ManifestError::Version(self.schema_version));
        }
        self.gen_params.validate().map_err(|e| ManifestError::Invalid(e.to_string()))?;
        if let Some(t) = &self.train {
            t.validate().map_err(|e| ManifestError::Invalid(e.to_string()))?;
        }
        let mut ids = std::collections::BTreeSet::new();
        for d in &self.datasets {
            if !ids.insert(d.id.as_str()) {
                return Err(ManifestError::Invalid(format!("dataset `{}` listed twice", d.id)));
            }
            if d.channels.is_empty() {
                return Err(ManifestError::Invalid(format!("dataset `{}` has no channels", d.id)));
            }
            if let Some(m) = d.trim_wake_minutes {
                if !(m.is_finite() && m >= 0.0) {
                    return Err(ManifestError::Invalid(format!("dataset `{}`: bad trim_wake_minutes", d.id)));
                }
            }
        }
        let universe = self.universe();
        if universe.is_empty() {
            return Err(PlanError::EmptyUniverse.into());
        }
        for slot in &universe {
            slot.validate()?;
        }
        crate::plan::enumerate_pairs_with(&universe, self.pairing_rule())?;
        Ok(())
    }

    /// Descriptor of every dataset, with its first channel as the channel.
    pub fn dataset_descriptor(&self, d: &DatasetEntry) -> DatasetDescriptor {
        DatasetDescriptor {
            dataset_id: d.id.clone(),
            environment_id: d.env.clone().unwrap_or_else(|| d.id.clone()),
            condition: d.condition,
            channel: d.channels[0].primary.clone(),
            sampling_rate_hz: d.rate_hz,
            epoch_seconds: d.epoch_seconds,
        }
    }

    pub fn universe(&self) -> Vec<ChannelSlot> {
        self.datasets
            .iter()
            .flat_map(|d| {
                let base = self.dataset_descriptor(d);
                d.channels.iter().map(move |c| ChannelSlot {
                    descriptor: base.with_channel(&c.primary),
                    alternate_channel: c.alternate.clone(),
                    usable_as_source: c.source,
                    usable_as_target: c.target,
                })
            })
            .collect()
    }

    /// Build a manifest around an existing universe.
    pub fn from_universe(universe: &[ChannelSlot], gen_params: GenParams) -> Self {
        let mut datasets: Vec<DatasetEntry> = Vec::new();
        for slot in universe {
            let d = &slot.descriptor;
            let entry = ChannelEntry {
                primary: d.channel.clone(),
                alternate: slot.alternate_channel.clone(),
                source: slot.usable_as_source,
                target: slot.usable_as_target,
            };
            match datasets.iter_mut().find(|e| e.id == d.dataset_id) {
                Some(e) => e.channels.push(entry),
                None => datasets.push(DatasetEntry {
                    id: d.dataset_id.clone(),
                    env: (d.environment_id != d.dataset_id).then(|| d.environment_id.clone()),
                    condition: d.condition,
                    rate_hz: d.sampling_rate_hz,
                    epoch_seconds: d.epoch_seconds,
                    trim_wake_minutes: None,
                    channels: vec![entry],
                }),
            }
        }
        Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            gen_params,
            train: None,
            exhaustive: false,
            datasets,
        }
    }
}
