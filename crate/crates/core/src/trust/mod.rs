//! Verifier logic: reputation scoring, reliability classification and
//! aggregation weights.
//!
//! Reputation follows exponential smoothing,
//! `score' = alpha * score + (1 - alpha) * accuracy`, and a rejected
//! submission counts as accuracy 0.

mod verify;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ids::DeviceId;

pub use verify::{coherence_screen, verify_update, RejectReason, UpdateSubmission, VerificationOutcome};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrustError {
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("no reliable device in the round")]
    NoReliableDevices,
    #[error("{records} reputation records but {counts} sample counts")]
    LengthMismatch { records: usize, counts: usize },
}

fn unit(name: &'static str, value: f64) -> Result<f64, TrustError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(TrustError::OutOfRange { name, value })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub round: u64,
    /// Validation accuracy, or 0 for a penalty.
    pub accuracy: f64,
    pub score_after: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<RejectReason>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReputationRecord {
    pub device_id: DeviceId,
    pub score: f64,
    pub rounds_participated: u64,
    pub last_round: Option<u64>,
    pub history: Vec<HistoryEntry>,
}

impl ReputationRecord {
    pub fn new(device_id: DeviceId, initial_score: f64) -> Result<Self, TrustError> {
        Ok(Self {
            device_id,
            score: unit("initial_score", initial_score)?,
            rounds_participated: 0,
            last_round: None,
            history: Vec::new(),
        })
    }

    fn push(&self, round: u64, accuracy: f64, score: f64, penalty: Option<RejectReason>) -> Self {
        let mut next = self.clone();
        next.score = score;
        next.rounds_participated += 1;
        next.last_round = Some(round);
        next.history.push(HistoryEntry { round, accuracy, score_after: score, penalty });
        next
    }
}

/// Convex combination kept inside `[min(a, b), max(a, b)]` despite rounding.
fn smooth(alpha: f64, score: f64, accuracy: f64) -> f64 {
    let raw = alpha * score + (1.0 - alpha) * accuracy;
    raw.clamp(score.min(accuracy), score.max(accuracy))
}

pub fn update_reputation(
    record: &ReputationRecord,
    round: u64,
    accuracy: f64,
    alpha: f64,
) -> Result<ReputationRecord, TrustError> {
    let accuracy = unit("accuracy", accuracy)?;
    let alpha = unit("alpha", alpha)?;
    Ok(record.push(round, accuracy, smooth(alpha, record.score, accuracy), None))
}

/// Applies one penalty: the update rule with accuracy 0, i.e.
/// `score' = factor * score`.
pub fn penalize(record: &ReputationRecord, round: u64, reason: RejectReason, factor: f64) -> ReputationRecord {
    let factor = factor.clamp(0.0, 1.0);
    record.push(round, 0.0, smooth(factor, record.score, 0.0), Some(reason))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reliability {
    Reliable,
    Unreliable,
}

/// Unreliable iff `score < threshold`.
pub fn classify(record: &ReputationRecord, threshold: f64) -> Reliability {
    if record.score < threshold {
        Reliability::Unreliable
    } else {
        Reliability::Reliable
    }
}

/// `score_i * n_i` for reliable devices, 0 otherwise, normalized to sum 1.
pub fn aggregation_weights(
    records: &[&ReputationRecord],
    sample_counts: &[usize],
    threshold: f64,
) -> Result<Vec<f64>, TrustError> {
    if records.len() != sample_counts.len() {
        return Err(TrustError::LengthMismatch { records: records.len(), counts: sample_counts.len() });
    }
    let raw: Vec<f64> = records
        .iter()
        .zip(sample_counts)
        .map(|(r, &n)| match classify(r, threshold) {
            Reliability::Reliable => r.score * n as f64,
            Reliability::Unreliable => 0.0,
        })
        .collect();
    normalize(raw).ok_or(TrustError::NoReliableDevices)
}

/// Plain sample-count weights, used when reputation weighting is disabled.
pub fn sample_weights(sample_counts: &[usize]) -> Option<Vec<f64>> {
    normalize(sample_counts.iter().map(|&n| n as f64).collect())
}

fn normalize(raw: Vec<f64>) -> Option<Vec<f64>> {
    let mut sorted = raw.clone();
    sorted.sort_by(f64::total_cmp);
    let total: f64 = sorted.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return None;
    }
    Some(raw.into_iter().map(|w| w / total).collect())
}

/// Every device's record, keyed by device id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReputationTable {
    records: BTreeMap<DeviceId, ReputationRecord>,
}

impl ReputationTable {
    pub fn new(devices: impl IntoIterator<Item = DeviceId>, initial_score: f64) -> Result<Self, TrustError> {
        let mut records = BTreeMap::new();
        for d in devices {
            records.insert(d, ReputationRecord::new(d, initial_score)?);
        }
        Ok(Self { records })
    }

    pub fn get(&self, id: &DeviceId) -> Option<&ReputationRecord> {
        self.records.get(id)
    }

    pub fn set(&mut self, record: ReputationRecord) {
        self.records.insert(record.device_id, record);
    }

    pub fn records(&self) -> impl Iterator<Item = &ReputationRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// CSV export: `device_id,round,accuracy,score`, one row per history
    /// entry, ordered by device then round.
    pub fn to_csv(&self) -> String {
        #[derive(Serialize)]
        struct Row {
            device_id: DeviceId,
            round: u64,
            accuracy: f64,
            score: f64,
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in self.records.values() {
            for h in &r.history {
                w.serialize(Row { device_id: r.device_id, round: h.round, accuracy: h.accuracy, score: h.score_after })
                    .expect("writing csv to memory");
            }
        }
        if self.records.values().all(|r| r.history.is_empty()) {
            w.write_record(["device_id", "round", "accuracy", "score"]).expect("writing csv to memory");
        }
        String::from_utf8(w.into_inner().expect("flushing csv to memory")).expect("csv is utf-8")
    }
}
