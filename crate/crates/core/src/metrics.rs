//! Confusion matrix, accuracy, per-class F1 and macro-F1.
//!
//! Macro-F1 always divides by the five stages, so a class that is neither
//! present nor predicted contributes an F1 of zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stages::{StageLabel, NUM_STAGES};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("label sequences differ in length ({truth} vs {pred})")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("no labels to score")]
    EmptyInput,
    #[error("confusion matrix is empty")]
    EmptyMatrix,
}

/// Rows are true stages, columns predicted stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix(pub [[u64; NUM_STAGES]; NUM_STAGES]);

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn get(&self, truth: StageLabel, pred: StageLabel) -> u64 {
        self.0[truth.ordinal()][pred.ordinal()]
    }

    pub fn transpose(&self) -> Self {
        let mut t = [[0; NUM_STAGES]; NUM_STAGES];
        for (i, row) in self.0.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                t[j][i] = *v;
            }
        }
        ConfusionMatrix(t)
    }
}

/// Scores for one evaluation. All values are fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub acc: f64,
    pub mf1: f64,
    pub per_class_f1: [f64; NUM_STAGES],
}

pub fn confusion(truth: &[StageLabel], pred: &[StageLabel]) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut cm = ConfusionMatrix::default();
    for (t, p) in truth.iter().zip(pred) {
        cm.0[t.ordinal()][p.ordinal()] += 1;
    }
    Ok(cm)
}

pub fn metric_set(cm: &ConfusionMatrix) -> Result<MetricSet, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let m = &cm.0;
    let trace: u64 = (0..NUM_STAGES).map(|i| m[i][i]).sum();

    let mut per_class_f1 = [0.0; NUM_STAGES];
    for (c, f1) in per_class_f1.iter_mut().enumerate() {
        let tp = m[c][c] as f64;
        let actual: u64 = m[c].iter().sum();
        let predicted: u64 = m.iter().map(|row| row[c]).sum();
        // 2PR/(P+R) reduces to 2TP/(actual+predicted) and is zero whenever TP is.
        if actual + predicted > 0 && tp > 0.0 {
            *f1 = 2.0 * tp / (actual + predicted) as f64;
        }
    }

    Ok(MetricSet {
        acc: trace as f64 / total as f64,
        mf1: per_class_f1.iter().sum::<f64>() / NUM_STAGES as f64,
        per_class_f1,
    })
}

/// Convenience wrapper over [`confusion`] and [`metric_set`].
pub fn score(truth: &[StageLabel], pred: &[StageLabel]) -> Result<MetricSet, MetricsError> {
    metric_set(&confusion(truth, pred)?)
}
