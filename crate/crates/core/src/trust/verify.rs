use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dapp::DeviceRegistry;
use crate::fl::{deserialize_params, ModelParams, ModelShape};
use crate::ids::DeviceId;
use crate::store::{ContentId, ContentStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    HashMismatch,
    ShapeMismatch,
    NonFiniteWeights,
    StaleRound,
    Duplicate,
    Unauthenticated,
    /// Far from the round's coordinate-wise median update.
    Incoherent,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::HashMismatch => "hash_mismatch",
            Self::ShapeMismatch => "shape_mismatch",
            Self::NonFiniteWeights => "non_finite_weights",
            Self::StaleRound => "stale_round",
            Self::Duplicate => "duplicate",
            Self::Unauthenticated => "unauthenticated",
            Self::Incoherent => "incoherent",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum VerificationOutcome {
    /// Carries the decoded parameters so callers need not decode twice.
    Accept(ModelParams),
    Reject(RejectReason),
}

impl VerificationOutcome {
    pub fn is_accept(&self) -> bool {
        matches!(self, Self::Accept(_))
    }

    pub fn reason(&self) -> Option<RejectReason> {
        match self {
            Self::Accept(_) => None,
            Self::Reject(r) => Some(*r),
        }
    }
}

/// What the verifier sees of an ingested update: the blob itself lives in
/// the content store.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UpdateSubmission {
    pub device_id: DeviceId,
    pub credential: Vec<u8>,
    pub round: u64,
    pub content_id: ContentId,
    pub shape: ModelShape,
}

/// Checks run in a fixed order and the first failure is reported:
/// authentication, round, duplicate, blob hash, shape, finiteness.
/// `accepted` holds `(round, device)` pairs already accepted.
pub fn verify_update(
    sub: &UpdateSubmission,
    store: &ContentStore,
    accepted: &BTreeSet<(u64, DeviceId)>,
    registry: &DeviceRegistry,
    current_round: u64,
) -> VerificationOutcome {
    use VerificationOutcome::Reject;
    if !registry.authenticate(sub.device_id, &sub.credential) {
        return Reject(RejectReason::Unauthenticated);
    }
    if sub.round != current_round {
        return Reject(RejectReason::StaleRound);
    }
    if accepted.contains(&(sub.round, sub.device_id)) {
        return Reject(RejectReason::Duplicate);
    }
    let Ok(blob) = store.get(&sub.content_id) else {
        return Reject(RejectReason::HashMismatch);
    };
    let params = match deserialize_params(blob) {
        Ok(p) if p.shape == sub.shape => p,
        _ => return Reject(RejectReason::ShapeMismatch),
    };
    if !params.all_finite() {
        return Reject(RejectReason::NonFiniteWeights);
    }
    VerificationOutcome::Accept(params)
}

/// Flags updates whose Euclidean distance to the coordinate-wise median of
/// all updates exceeds `factor` times the median of those distances.
/// Returns one flag per update, `true` meaning coherent. Fewer than three
/// updates carry no majority, so all are kept.
pub fn coherence_screen(updates: &[&ModelParams], factor: f64) -> Vec<bool> {
    let n = updates.len();
    if n < 3 {
        return vec![true; n];
    }
    let len = updates[0].weights.len();
    let mut column = Vec::with_capacity(n);
    let centre: Vec<f64> = (0..len)
        .map(|j| {
            column.clear();
            column.extend(updates.iter().map(|u| u.weights[j]));
            median(&mut column)
        })
        .collect();
    let dist: Vec<f64> = updates
        .iter()
        .map(|u| u.weights.iter().zip(&centre).map(|(w, c)| (w - c) * (w - c)).sum::<f64>().sqrt())
        .collect();
    let mut sorted = dist.clone();
    let typical = median(&mut sorted);
    dist.iter().map(|&d| d <= factor * typical).collect()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
