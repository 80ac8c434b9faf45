//! DApp manager: the adapter gateway (authenticate, filter, store, anchor)
//! and the aggregator (verify, score, weight, average, anchor).
//!
//! The manager runs off-ledger; every decision it takes is anchored. A round
//! goes through [`DappManager::open_round`], any number of
//! [`DappManager::ingest_update`] calls, an optional
//! [`DappManager::close_collection`], then [`DappManager::close_round`].

mod anchor;
mod backend;
mod registry;
mod submission;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use anchor::{AnchorError, AnchorKind, AnchorRecord};
pub use backend::{LedgerBackend, SimLedger};
pub use registry::{DeviceRegistry, Enrollment};
pub use submission::{MalformedSubmission, Submission};

use crate::fl::{deserialize_params, evaluate, fedavg, serialize_params, DataShard, FlError, ModelParams, WeightedUpdate};
use crate::ids::DeviceId;
use crate::ledger::{BlockId, LedgerError};
use crate::par::Execution;
use crate::store::{ContentId, ContentStore, StoreError};
use crate::time::SimTime;
use crate::trust::{
    aggregation_weights, coherence_screen, penalize, sample_weights, update_reputation, verify_update, RejectReason,
    ReputationTable, TrustError, UpdateSubmission, VerificationOutcome,
};

/// Settings that stay fixed across rounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DappConfig {
    pub initial_score: f64,
    /// Multiplier applied to a score on each penalty.
    pub penalty_factor: f64,
    /// Updates farther than this many median distances from the median
    /// update are rejected as incoherent.
    pub coherence_factor: f64,
    /// When off, updates are weighted by sample count only and neither the
    /// coherence screen nor reliability exclusion applies.
    pub reputation_weighting: bool,
    pub update_payload_bytes: usize,
    pub global_payload_bytes: usize,
    pub digest_payload_bytes: usize,
    pub max_blob_bytes: usize,
    pub firmware_tag: String,
    pub execution: Execution,
}

impl Default for DappConfig {
    fn default() -> Self {
        Self {
            initial_score: 0.5,
            penalty_factor: 0.5,
            coherence_factor: 3.0,
            reputation_weighting: true,
            update_payload_bytes: 2560,
            global_payload_bytes: 2560,
            digest_payload_bytes: 1792,
            max_blob_bytes: 1 << 20,
            firmware_tag: "tfl-fw-1.0".into(),
            execution: Execution::default(),
        }
    }
}

/// Per-round parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundConfig {
    pub round: u64,
    pub start: SimTime,
    pub deadline: SimTime,
    pub quorum: usize,
    pub alpha: f64,
    pub threshold: f64,
}

impl RoundConfig {
    fn validate(&self) -> Result<(), RoundError> {
        if self.deadline <= self.start {
            return Err(RoundError::InvalidRoundConfig("deadline must be after round start"));
        }
        if self.quorum == 0 {
            return Err(RoundError::InvalidRoundConfig("quorum must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.threshold) {
            return Err(RoundError::InvalidRoundConfig("alpha and threshold must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IngestError {
    #[error("device failed authentication")]
    Unauthenticated,
    #[error("device already submitted this round")]
    Duplicate,
    #[error("submission of {len} bytes is too large")]
    PayloadTooLarge { len: usize },
    #[error("no round is collecting updates")]
    CollectionClosed,
    #[error("submission for round {got} while round {current} is current")]
    StaleRound { got: u64, current: u64 },
    #[error("ledger: {0}")]
    Ledger(#[from] LedgerError),
    #[error("store: {0}")]
    Store(String),
}

impl IngestError {
    /// The reputation consequence of this rejection, if any.
    pub fn penalty(&self) -> Option<RejectReason> {
        match self {
            Self::Duplicate => Some(RejectReason::Duplicate),
            Self::StaleRound { .. } => Some(RejectReason::StaleRound),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RoundError {
    #[error("invalid round config: {0}")]
    InvalidRoundConfig(&'static str),
    #[error("expected round {expected}, got {got}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("no round is open")]
    NotOpen,
    #[error("quorum not met: {accepted} accepted, {quorum} required")]
    QuorumNotMet { accepted: usize, quorum: usize },
    #[error("no reliable device contributed")]
    NoReliableDevices,
    #[error("ledger: {0}")]
    Ledger(#[from] LedgerError),
    #[error("store: {0}")]
    Store(String),
    #[error("model: {0}")]
    Fl(#[from] FlError),
    #[error("anchor: {0}")]
    Anchor(#[from] AnchorError),
    #[error("trust: {0}")]
    Trust(#[from] TrustError),
}

impl From<StoreError> for RoundError {
    fn from(e: StoreError) -> Self {
        Self::Store(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FetchError {
    #[error("round {0} has no finalized global model")]
    NotFinalized(u64),
    #[error("global model blob {0} failed its integrity check")]
    IntegrityFailure(ContentId),
    #[error("anchored global model record is unreadable")]
    Malformed,
}

/// Receipt for an anchored device update.
#[derive(Clone, Debug, PartialEq)]
pub struct IngestReceipt {
    pub record: AnchorRecord,
    pub block: BlockId,
    pub payload_len: usize,
}

/// One anchor written while closing a round.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorWrite {
    pub kind: AnchorKind,
    pub block: BlockId,
    pub content: ContentId,
    pub payload_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundResult {
    pub round: u64,
    pub global: ModelParams,
    pub accepted: Vec<DeviceId>,
    /// Normalized weight per accepted device, in `accepted` order.
    pub weights: Vec<f64>,
    pub anchor: BlockId,
    pub contributing: Vec<BlockId>,
    pub global_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum VoidReason {
    QuorumNotMet { accepted: usize, quorum: usize },
    NoReliableDevices,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RoundOutcome {
    Finalized(RoundResult),
    /// The previous global model carries forward.
    Void(VoidReason),
}

/// Everything decided when a round closes.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundReport {
    pub round: u64,
    pub outcome: RoundOutcome,
    pub rejections: Vec<(DeviceId, RejectReason)>,
    /// Validation accuracy of every verified update.
    pub accuracies: BTreeMap<DeviceId, f64>,
    pub anchors: Vec<AnchorWrite>,
}

#[derive(Clone, Debug)]
struct PendingUpdate {
    sub: UpdateSubmission,
    n_samples: u64,
    block: BlockId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Idle,
    Collecting,
    Aggregating,
}

#[derive(Clone, Debug)]
struct Finalized {
    anchor: BlockId,
}

pub struct DappManager<L> {
    cfg: DappConfig,
    registry: DeviceRegistry,
    ledger: L,
    store: ContentStore,
    validation: DataShard,
    reputation: ReputationTable,
    global: ModelParams,
    phase: Phase,
    round: Option<RoundConfig>,
    last_round: u64,
    pending: Vec<PendingUpdate>,
    ingested: BTreeSet<DeviceId>,
    penalties: BTreeMap<DeviceId, RejectReason>,
    finalized: BTreeMap<u64, Finalized>,
}

impl<L: LedgerBackend> DappManager<L> {
    pub fn new(
        cfg: DappConfig,
        registry: DeviceRegistry,
        ledger: L,
        store: ContentStore,
        validation: DataShard,
        initial_global: ModelParams,
    ) -> Result<Self, TrustError> {
        let reputation = ReputationTable::new(registry.enrolled(), cfg.initial_score)?;
        Ok(Self {
            cfg,
            registry,
            ledger,
            store,
            validation,
            reputation,
            global: initial_global,
            phase: Phase::Idle,
            round: None,
            last_round: 0,
            pending: Vec::new(),
            ingested: BTreeSet::new(),
            penalties: BTreeMap::new(),
            finalized: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &DappConfig {
        &self.cfg
    }

    pub fn ledger(&self) -> &L {
        &self.ledger
    }

    pub fn ledger_mut(&mut self) -> &mut L {
        &mut self.ledger
    }

    pub fn store(&self) -> &ContentStore {
        &self.store
    }

    pub fn validation(&self) -> &DataShard {
        &self.validation
    }

    pub fn registry(&self) -> &DeviceRegistry {
        &self.registry
    }

    pub fn reputation(&self) -> &ReputationTable {
        &self.reputation
    }

    /// Current global model (the last finalized one, or the initial model).
    pub fn global(&self) -> &ModelParams {
        &self.global
    }

    /// Last round that was closed, finalized or void; 0 before any round.
    pub fn last_round(&self) -> u64 {
        self.last_round
    }

    pub fn is_collecting(&self) -> bool {
        self.phase == Phase::Collecting
    }

    pub fn current_round(&self) -> Option<u64> {
        self.round.as_ref().map(|r| r.round)
    }

    /// Devices that got an update anchored in the open round.
    pub fn ingested(&self) -> &BTreeSet<DeviceId> {
        &self.ingested
    }

    pub fn open_round(&mut self, cfg: RoundConfig) -> Result<(), RoundError> {
        cfg.validate()?;
        if self.phase != Phase::Idle {
            return Err(RoundError::OutOfOrder { expected: self.last_round + 1, got: cfg.round });
        }
        if cfg.round != self.last_round + 1 {
            return Err(RoundError::OutOfOrder { expected: self.last_round + 1, got: cfg.round });
        }
        self.round = Some(cfg);
        self.phase = Phase::Collecting;
        self.pending.clear();
        self.ingested.clear();
        Ok(())
    }

    /// Gateway path: authenticate, filter duplicates and stale rounds, store
    /// the blob off-chain and anchor its hash. Duplicates and stale
    /// submissions are recorded for a penalty at the next round close.
    pub fn ingest_update(&mut self, sub: Submission, now: SimTime) -> Result<IngestReceipt, IngestError> {
        if !self.registry.authenticate(sub.device_id, &sub.credential) {
            return Err(IngestError::Unauthenticated);
        }
        let current = match (self.phase, &self.round) {
            (Phase::Collecting, Some(r)) => r.round,
            (Phase::Aggregating, Some(r)) if sub.round <= r.round => return Err(self.stale(sub.device_id, sub.round, r.round)),
            (Phase::Idle, _) if sub.round <= self.last_round && self.last_round > 0 => {
                return Err(self.stale(sub.device_id, sub.round, self.last_round))
            }
            _ => return Err(IngestError::CollectionClosed),
        };
        if sub.round != current {
            return Err(self.stale(sub.device_id, sub.round, current));
        }
        if self.ingested.contains(&sub.device_id) {
            self.penalties.entry(sub.device_id).or_insert(RejectReason::Duplicate);
            return Err(IngestError::Duplicate);
        }
        if sub.params.len() > self.cfg.max_blob_bytes {
            return Err(IngestError::PayloadTooLarge { len: sub.params.len() });
        }
        if sub.params.is_empty() {
            return Err(IngestError::Store("empty update".into()));
        }

        let content = ContentId::of(&sub.params);
        let record = AnchorRecord::device_update(sub.device_id, sub.round, content)
            .with_meta("fw", self.cfg.firmware_tag.clone())
            .with_meta("n_samples", sub.n_samples.to_string())
            .with_meta("role", "adapter")
            .with_meta("shape", format!("{}x{}x{}", sub.shape.input, sub.shape.hidden, sub.shape.output))
            .with_meta("ts_us", now.as_micros().to_string());
        let payload = record.encode_padded(self.cfg.update_payload_bytes).map_err(|e| match e {
            AnchorError::TooLarge(len) => IngestError::PayloadTooLarge { len },
            other => IngestError::Store(other.to_string()),
        })?;
        let payload_len = payload.len();
        // Anchor first so a ledger failure leaves no orphaned blob behind.
        let block = self.ledger.anchor(payload, now)?;
        self.store.put(&sub.params).map_err(|e| IngestError::Store(e.to_string()))?;
        self.ingested.insert(sub.device_id);
        self.pending.push(PendingUpdate {
            sub: UpdateSubmission {
                device_id: sub.device_id,
                credential: sub.credential,
                round: sub.round,
                content_id: content,
                shape: sub.shape,
            },
            n_samples: sub.n_samples,
            block,
        });
        Ok(IngestReceipt { record, block, payload_len })
    }

    fn stale(&mut self, device: DeviceId, got: u64, current: u64) -> IngestError {
        self.penalties.entry(device).or_insert(RejectReason::StaleRound);
        IngestError::StaleRound { got, current }
    }

    /// Stops accepting updates for the open round (deadline reached or all
    /// devices heard from). Later submissions count as stale.
    pub fn close_collection(&mut self) -> Result<(), RoundError> {
        match self.phase {
            Phase::Collecting => {
                self.phase = Phase::Aggregating;
                Ok(())
            }
            _ => Err(RoundError::NotOpen),
        }
    }

    /// Verifies, scores and aggregates the round's updates, then anchors the
    /// global model (unless the round is void) and the reputation table.
    pub fn close_round(&mut self, now: SimTime) -> Result<RoundReport, RoundError> {
        if self.phase == Phase::Idle {
            return Err(RoundError::NotOpen);
        }
        let rc = self.round.clone().ok_or(RoundError::NotOpen)?;
        let pending = std::mem::take(&mut self.pending);

        // Verification in ingest order.
        let mut rejections: BTreeMap<DeviceId, RejectReason> = std::mem::take(&mut self.penalties);
        let mut accepted_set = BTreeSet::new();
        let mut verified: Vec<(PendingUpdate, ModelParams)> = Vec::new();
        for p in pending {
            match verify_update(&p.sub, &self.store, &accepted_set, &self.registry, rc.round) {
                VerificationOutcome::Accept(params) => {
                    accepted_set.insert((rc.round, p.sub.device_id));
                    verified.push((p, params));
                }
                VerificationOutcome::Reject(reason) => {
                    rejections.entry(p.sub.device_id).or_insert(reason);
                }
            }
        }
        if self.cfg.reputation_weighting {
            let refs: Vec<&ModelParams> = verified.iter().map(|(_, p)| p).collect();
            let flags = coherence_screen(&refs, self.cfg.coherence_factor);
            let mut kept = Vec::with_capacity(verified.len());
            for ((p, params), ok) in verified.into_iter().zip(flags) {
                if ok {
                    kept.push((p, params));
                } else {
                    rejections.entry(p.sub.device_id).or_insert(RejectReason::Incoherent);
                }
            }
            verified = kept;
        }

        // Score every surviving update on the verifier's validation shard.
        let validation = &self.validation;
        let accs = self.cfg.execution.map(&verified, |(_, params)| evaluate(params, validation));
        let mut accuracies = BTreeMap::new();
        for ((p, _), acc) in verified.iter().zip(accs) {
            accuracies.insert(p.sub.device_id, acc?);
        }

        // One reputation event per device: a penalty if anything was
        // rejected, otherwise the accuracy update.
        for (&device, &reason) in &rejections {
            if let Some(r) = self.reputation.get(&device) {
                let next = penalize(r, rc.round, reason, self.cfg.penalty_factor);
                self.reputation.set(next);
            }
        }
        for (&device, &acc) in accuracies.iter().filter(|(d, _)| !rejections.contains_key(d)) {
            if let Some(r) = self.reputation.get(&device) {
                let next = update_reputation(r, rc.round, acc, rc.alpha)?;
                self.reputation.set(next);
            }
        }

        let mut anchors = Vec::new();
        let outcome = self.aggregate(&rc, &verified, now, &mut anchors)?;

        let table = self.reputation.to_csv();
        let digest = self.store.put(table.as_bytes())?;
        let reliable = self.reputation.records().filter(|r| r.score >= rc.threshold).count();
        let rec = AnchorRecord::reputation_digest(rc.round, digest)
            .with_meta("devices", self.reputation.len().to_string())
            .with_meta("reliable", reliable.to_string())
            .with_meta("role", "verifier")
            .with_meta("ts_us", now.as_micros().to_string());
        let payload = rec.encode_padded(self.cfg.digest_payload_bytes)?;
        let payload_len = payload.len();
        let block = self.ledger.anchor(payload, now)?;
        anchors.push(AnchorWrite { kind: AnchorKind::ReputationDigest, block, content: digest, payload_len });

        self.phase = Phase::Idle;
        self.round = None;
        self.last_round = rc.round;
        Ok(RoundReport { round: rc.round, outcome, rejections: rejections.into_iter().collect(), accuracies, anchors })
    }

    fn aggregate(
        &mut self,
        rc: &RoundConfig,
        verified: &[(PendingUpdate, ModelParams)],
        now: SimTime,
        anchors: &mut Vec<AnchorWrite>,
    ) -> Result<RoundOutcome, RoundError> {
        if verified.len() < rc.quorum {
            return Ok(RoundOutcome::Void(VoidReason::QuorumNotMet { accepted: verified.len(), quorum: rc.quorum }));
        }
        let counts: Vec<usize> = verified.iter().map(|(p, _)| p.n_samples as usize).collect();
        let weights = if self.cfg.reputation_weighting {
            let recs: Vec<_> = verified.iter().map(|(p, _)| self.reputation.get(&p.sub.device_id).expect("enrolled")).collect();
            match aggregation_weights(&recs, &counts, rc.threshold) {
                Ok(w) => w,
                Err(TrustError::NoReliableDevices) => return Ok(RoundOutcome::Void(VoidReason::NoReliableDevices)),
                Err(e) => return Err(e.into()),
            }
        } else {
            match sample_weights(&counts) {
                Some(w) => w,
                None => return Ok(RoundOutcome::Void(VoidReason::NoReliableDevices)),
            }
        };
        let updates: Vec<WeightedUpdate> =
            verified.iter().zip(&weights).map(|((_, params), &weight)| WeightedUpdate { params: params.clone(), weight }).collect();
        let global = fedavg(&updates)?;
        let contributing: Vec<BlockId> =
            verified.iter().zip(&weights).filter(|(_, &w)| w > 0.0).map(|((p, _), _)| p.block).collect();

        let blob = serialize_params(&global);
        let content = self.store.put(&blob)?;
        let rec = AnchorRecord::global_model(rc.round, content, contributing.clone())?
            .with_meta("n_updates", contributing.len().to_string())
            .with_meta("role", "aggregator")
            .with_meta("shape", format!("{}x{}x{}", global.shape.input, global.shape.hidden, global.shape.output))
            .with_meta("ts_us", now.as_micros().to_string());
        let payload = rec.encode_padded(self.cfg.global_payload_bytes)?;
        let payload_len = payload.len();
        let anchor = self.ledger.anchor(payload, now)?;
        anchors.push(AnchorWrite { kind: AnchorKind::GlobalModel, block: anchor, content, payload_len });

        let global_accuracy = evaluate(&global, &self.validation)?;
        self.global = global.clone();
        self.finalized.insert(rc.round, Finalized { anchor });
        Ok(RoundOutcome::Finalized(RoundResult {
            round: rc.round,
            global,
            accepted: verified.iter().map(|(p, _)| p.sub.device_id).collect(),
            weights,
            anchor,
            contributing,
            global_accuracy,
        }))
    }

    /// Opens `cfg.round`, ingests `submissions` in order at `now`, and
    /// closes the round. Ingest rejections are reflected in reputation.
    pub fn run_round(&mut self, cfg: RoundConfig, submissions: Vec<Submission>, now: SimTime) -> Result<RoundResult, RoundError> {
        self.open_round(cfg)?;
        for s in submissions {
            let _ = self.ingest_update(s, now);
        }
        self.close_collection()?;
        match self.close_round(now)?.outcome {
            RoundOutcome::Finalized(r) => Ok(r),
            RoundOutcome::Void(VoidReason::QuorumNotMet { accepted, quorum }) => Err(RoundError::QuorumNotMet { accepted, quorum }),
            RoundOutcome::Void(VoidReason::NoReliableDevices) => Err(RoundError::NoReliableDevices),
        }
    }

    /// Resolves the anchored global model of `round` and checks the blob
    /// against the anchored hash.
    pub fn fetch_global(&self, round: u64) -> Result<ModelParams, FetchError> {
        let f = self.finalized.get(&round).ok_or(FetchError::NotFinalized(round))?;
        let block = self.ledger.block(&f.anchor).ok_or(FetchError::Malformed)?;
        let rec = AnchorRecord::decode(&block.payload).map_err(|_| FetchError::Malformed)?;
        if rec.kind != AnchorKind::GlobalModel || rec.round != round {
            return Err(FetchError::Malformed);
        }
        let blob = self.store.get(&rec.content_hash).map_err(|e| match e {
            StoreError::IntegrityFailure(id) => FetchError::IntegrityFailure(id),
            _ => FetchError::Malformed,
        })?;
        deserialize_params(blob).map_err(|_| FetchError::Malformed)
    }

    /// Fault injection for tests.
    #[doc(hidden)]
    pub fn store_mut(&mut self) -> &mut ContentStore {
        &mut self.store
    }
}

/// `max(1, ceil(fraction * n))`.
pub fn default_quorum(n_clients: usize, fraction: f64) -> usize {
    ((fraction * n_clients as f64).ceil() as usize).max(1)
}
