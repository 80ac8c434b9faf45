//! One seeded repeat of an experiment: ledger nodes, coordinator, the DApp
//! manager behind its adapter queue, and the device fleet, all driven by a
//! single-threaded event loop on the simulated clock.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bus::{Delivery, SubscriptionId, TopicBus};
use super::clock::SimClock;
use super::device::{device_round, DelayModel, DeviceActor, PlannedSubmission};
use super::events::{Event, EventKind, EventLog};
use super::SimError;
use crate::config::ExperimentConfig;
use crate::dapp::{
    AnchorKind, DappConfig, DappManager, DeviceRegistry, RoundConfig, RoundOutcome, SimLedger, Submission,
    VoidReason,
};
use crate::fl::{init_model, make_synthetic_dataset, FlError, ModelParams, ModelShape, SyntheticSpec, TrainConfig};
use crate::hash::hash_bytes;
use crate::ids::DeviceId;
use crate::ledger::{BlockId, LatencyMatrix, NodeState};
use crate::seed::{self, Stream};
use crate::store::{ContentId, ContentStore};
use crate::time::{SimDuration, SimTime};
use crate::trust::ReputationTable;

pub const ADAPTER: &str = "adapter";
pub const VERIFIER: &str = "verifier";
pub const AGGREGATOR: &str = "aggregator";
pub const COORDINATOR: &str = "coordinator";

/// Summary of one round as it closed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub start_us: u64,
    pub end_us: u64,
    /// `finalized`, `quorum_not_met` or `no_reliable_devices`.
    pub outcome: String,
    pub accepted: usize,
    pub rejections: BTreeMap<String, String>,
    pub global_accuracy: Option<f64>,
    /// Accuracy of the model in force after the round; a void round keeps
    /// the previous model.
    pub model_accuracy: f64,
    /// Devices whose score is below the threshold after this round.
    pub unreliable: Vec<String>,
}

/// Everything a repeat produced.
#[derive(Clone, Debug)]
pub struct RepeatOutput {
    pub repeat: usize,
    pub log: EventLog,
    pub rounds: Vec<RoundRecord>,
    /// The coordinator's view of the ledger.
    pub ledger: NodeState,
    pub store: ContentStore,
    pub reputation: ReputationTable,
    pub global: ModelParams,
    /// Validation accuracy of the final global model.
    pub final_accuracy: f64,
}

#[derive(Clone, Debug)]
enum Ev {
    RoundStart(u64),
    Deliver(Delivery),
    DevicePublish { device: usize, plan: PlannedSubmission },
    AdapterService,
    Deadline(u64),
    Aggregate(u64),
    Milestone,
    Gossip,
}

struct World<'a> {
    cfg: &'a ExperimentConfig,
    clock: SimClock<Ev>,
    bus: TopicBus,
    adapter_sub: SubscriptionId,
    devices: Vec<DeviceActor>,
    dapp: DappManager<SimLedger>,
    log: EventLog,
    rounds: Vec<RoundRecord>,
    queue: VecDeque<Submission>,
    adapter_busy: bool,
    heard: BTreeSet<DeviceId>,
    round_start: SimTime,
    /// Anchor blocks awaiting confirmation, with their issue time.
    unconfirmed: BTreeMap<BlockId, SimTime>,
    gossip_at: Option<SimTime>,
    finished: bool,
}

fn secs(s: f64) -> SimDuration {
    SimDuration::from_secs_f64(s)
}

impl<'a> World<'a> {
    fn new(cfg: &'a ExperimentConfig, repeat: usize) -> Result<Self, SimError> {
        let base = seed::derive(cfg.seed, Stream::Repeat, repeat as u64);
        let f = &cfg.fl;
        let spec = SyntheticSpec {
            seed: seed::derive(base, Stream::Dataset, 0),
            n_clients: cfg.n_clients,
            non_iid_alpha: f.non_iid_alpha,
            n_classes: f.n_classes,
            input_dim: f.input_dim,
            total_samples: f.samples_per_client * cfg.n_clients,
            validation_samples: f.validation_samples,
            separation: f.separation,
            noise_std: f.noise_std,
        };
        let (shards, validation) = make_synthetic_dataset(&spec)?;
        let shape = ModelShape::new(f.input_dim, f.hidden_dim, f.n_classes);
        let global = init_model(seed::derive(base, Stream::ModelInit, 0), shape)?;

        let mut registry = DeviceRegistry::new();
        let train = TrainConfig { epochs: f.epochs, learning_rate: f.learning_rate, batch_size: f.batch_size, seed: 0 };
        let t = &cfg.timing;
        let compute = DelayModel { base_s: t.compute_base_s, sigma: t.compute_sigma };
        let network = DelayModel { base_s: t.network_base_s, sigma: t.network_sigma };
        let behaviors = cfg.behaviors();
        let mut devices = Vec::with_capacity(shards.len());
        for (shard, behavior) in shards.into_iter().zip(behaviors) {
            let id = shard.owner;
            let dev_seed = seed::derive(base, Stream::Device, u64::from(id.0));
            let credential = hash_bytes(&dev_seed.to_le_bytes()).as_bytes().to_vec();
            registry.enroll(id, &credential);
            devices.push(DeviceActor::new(id, shard, credential, behavior, compute, network, train, dev_seed));
        }

        let ledger = SimLedger::new(
            LatencyMatrix::uniform(cfg.ledger.n_nodes, secs(cfg.ledger.gossip_latency_s)),
            secs(cfg.milestone_interval_s),
            cfg.ledger.tip_k,
            seed::rng(base, Stream::Tips, 0),
        );
        let dcfg = DappConfig {
            initial_score: cfg.trust.initial_score,
            penalty_factor: cfg.penalty_factor(),
            coherence_factor: cfg.trust.coherence_factor,
            reputation_weighting: cfg.trust.reputation_weighting,
            update_payload_bytes: cfg.ledger.update_payload_bytes,
            global_payload_bytes: cfg.ledger.global_payload_bytes,
            digest_payload_bytes: cfg.ledger.digest_payload_bytes,
            execution: cfg.execution,
            ..DappConfig::default()
        };
        let dapp = DappManager::new(dcfg, registry, ledger, ContentStore::new(), validation, global)
            .map_err(|e| SimError::Setup(e.to_string()))?;

        let mut bus = TopicBus::new(secs(t.bus_latency_s));
        let adapter_sub = bus.subscribe(&format!("fl/{}/updates/+", cfg.exp_id))?;
        for _ in &devices {
            bus.subscribe(&format!("fl/{}/global/+", cfg.exp_id))?;
        }

        let mut clock = SimClock::new();
        // The coordinator's schedule is not aligned with round starts.
        let interval_us = secs(cfg.milestone_interval_s).as_micros().max(1);
        let phase = seed::rng(base, Stream::MilestonePhase, 0).random_range(0..interval_us);
        clock.schedule(SimTime::from_micros(phase), Ev::Milestone).expect("clock starts at zero");
        clock.schedule(SimTime::ZERO, Ev::RoundStart(1)).expect("clock starts at zero");

        Ok(Self {
            cfg,
            clock,
            bus,
            adapter_sub,
            devices,
            dapp,
            log: EventLog::new(),
            rounds: Vec::new(),
            queue: VecDeque::new(),
            adapter_busy: false,
            heard: BTreeSet::new(),
            round_start: SimTime::ZERO,
            unconfirmed: BTreeMap::new(),
            gossip_at: None,
            finished: false,
        })
    }

    fn now(&self) -> SimTime {
        self.clock.now()
    }

    fn run(mut self, repeat: usize) -> Result<RepeatOutput, SimError> {
        let stall_after = secs(self.cfg.milestone_interval_s * 20.0 + 60.0);
        let mut finished_at: Option<SimTime> = None;
        let mut last = SimTime::ZERO;
        while let Some((t, ev)) = self.clock.pop() {
            if let Some(f) = self.cfg.timing.realtime_factor.filter(|f| *f > 0.0) {
                std::thread::sleep(std::time::Duration::from_secs_f64(t.saturating_since(last).as_secs_f64() * f));
            }
            last = t;
            self.handle(ev)?;
            self.collect_confirmations();
            self.arm_gossip();
            if self.finished {
                if self.unconfirmed.is_empty() {
                    break;
                }
                let since = *finished_at.get_or_insert(t);
                if t.saturating_since(since) > stall_after {
                    return Err(SimError::Stalled { at: t, unconfirmed: self.unconfirmed.len() });
                }
            }
        }
        let final_accuracy = crate::fl::evaluate(self.dapp.global(), self.dapp.validation())?;
        Ok(RepeatOutput {
            repeat,
            log: self.log,
            rounds: self.rounds,
            ledger: self.dapp.ledger().reference_node().clone(),
            store: self.dapp.store().clone(),
            reputation: self.dapp.reputation().clone(),
            global: self.dapp.global().clone(),
            final_accuracy,
        })
    }

    fn handle(&mut self, ev: Ev) -> Result<(), SimError> {
        let now = self.now();
        match ev {
            Ev::RoundStart(r) => self.start_round(r)?,
            Ev::Deliver(d) => {
                if d.subscription == self.adapter_sub {
                    let sub = Submission::decode(&d.message.payload).map_err(|_| SimError::Setup("undecodable submission".into()))?;
                    self.queue.push_back(sub);
                    if !self.adapter_busy {
                        self.adapter_busy = true;
                        self.clock.schedule_in(secs(self.cfg.ledger.pow_cost_s), Ev::AdapterService);
                    }
                }
            }
            Ev::DevicePublish { device, plan } => {
                let actor = &self.devices[device];
                let topic = format!("fl/{}/updates/{}", self.cfg.exp_id, actor.device_id);
                self.log.push(
                    Event::new(now, actor.device_id.to_string(), EventKind::Publish)
                        .digest(ContentId::of(&plan.submission.params))
                        .with("round", plan.submission.round),
                );
                for d in self.bus.publish(&topic, plan.submission.encode(), now)? {
                    self.clock.schedule(d.deliver_at, Ev::Deliver(d)).expect("bus latency is non-negative");
                }
            }
            Ev::AdapterService => self.serve_one(),
            Ev::Deadline(r) => {
                if self.dapp.current_round() == Some(r) && self.dapp.is_collecting() {
                    self.end_collection()?;
                }
            }
            Ev::Aggregate(r) => self.aggregate(r)?,
            Ev::Milestone => {
                let m = self.dapp.ledger_mut().issue_milestone(now)?;
                self.log.push(Event::new(now, COORDINATOR, EventKind::Milestone).digest(m.block.id).with("index", m.index));
                self.clock.schedule_in(secs(self.cfg.milestone_interval_s), Ev::Milestone);
            }
            Ev::Gossip => {
                self.gossip_at = None;
                self.dapp.ledger_mut().gossip_step(now);
            }
        }
        Ok(())
    }

    fn start_round(&mut self, r: u64) -> Result<(), SimError> {
        let now = self.now();
        let t = &self.cfg.timing;
        self.dapp.open_round(RoundConfig {
            round: r,
            start: now,
            deadline: now + secs(t.collection_window_s),
            quorum: self.cfg.quorum(),
            alpha: self.cfg.alpha,
            threshold: self.cfg.threshold,
        })?;
        self.round_start = now;
        self.heard.clear();
        self.log.push(Event::new(now, AGGREGATOR, EventKind::RoundStart).with("round", r));
        self.clock.schedule_in(secs(t.collection_window_s), Ev::Deadline(r));

        let topic = format!("fl/{}/global/{r}", self.cfg.exp_id);
        let global = self.dapp.global().clone();
        let deliveries = self.bus.publish(&topic, crate::fl::serialize_params(&global), now)?;
        let deliver_at: BTreeMap<usize, SimTime> =
            deliveries.iter().filter(|d| d.subscription != self.adapter_sub).map(|d| (d.subscription.0 - 1, d.deliver_at)).collect();
        // Every device trains on the same global model, so the work is
        // independent and can run in parallel; results are scheduled in
        // device order.
        let plans: Vec<Result<Vec<PlannedSubmission>, FlError>> =
            self.cfg.execution.map_mut(&mut self.devices, |a| device_round(a, &global, r));
        for (device, plan) in plans.into_iter().enumerate() {
            let Some(&at) = deliver_at.get(&device) else { continue };
            for p in plan? {
                let when = at + p.after;
                self.clock.schedule(when, Ev::DevicePublish { device, plan: p }).expect("future");
            }
        }
        Ok(())
    }

    fn serve_one(&mut self) {
        let now = self.now();
        let Some(sub) = self.queue.pop_front() else {
            self.adapter_busy = false;
            return;
        };
        let device = sub.device_id;
        let round = sub.round;
        let collecting = self.dapp.is_collecting();
        match self.dapp.ingest_update(sub, now) {
            Ok(receipt) => {
                self.unconfirmed.insert(receipt.block, now);
                self.log.push(
                    Event::new(now, ADAPTER, EventKind::Submit)
                        .digest(receipt.block)
                        .with("anchor", AnchorKind::DeviceUpdate.as_str())
                        .with("device", device.to_string())
                        .with("round", round)
                        .with("payload_len", receipt.payload_len as u64),
                );
            }
            Err(e) => {
                let reason = e.penalty().map_or_else(|| e.to_string(), |r| r.to_string());
                self.log.push(
                    Event::new(now, ADAPTER, EventKind::Reject)
                        .with("device", device.to_string())
                        .with("round", round)
                        .with("reason", reason),
                );
            }
        }
        if collecting {
            self.heard.insert(device);
            if self.heard.len() == self.devices.len() && self.dapp.is_collecting() {
                self.end_collection().expect("collecting");
            }
        }
        if self.queue.is_empty() {
            self.adapter_busy = false;
        } else {
            self.clock.schedule_in(secs(self.cfg.ledger.pow_cost_s), Ev::AdapterService);
        }
    }

    fn end_collection(&mut self) -> Result<(), SimError> {
        let r = self.dapp.current_round().expect("open round");
        self.dapp.close_collection()?;
        self.clock.schedule_in(secs(self.cfg.timing.aggregation_delay_s), Ev::Aggregate(r));
        Ok(())
    }

    fn aggregate(&mut self, r: u64) -> Result<(), SimError> {
        let now = self.now();
        let report = self.dapp.close_round(now)?;
        for (device, reason) in &report.rejections {
            self.log.push(
                Event::new(now, VERIFIER, EventKind::Reject)
                    .with("device", device.to_string())
                    .with("round", r)
                    .with("reason", reason.to_string()),
            );
        }
        for a in &report.anchors {
            let actor = match a.kind {
                AnchorKind::GlobalModel => AGGREGATOR,
                _ => VERIFIER,
            };
            self.unconfirmed.insert(a.block, now);
            self.log.push(
                Event::new(now, actor, EventKind::Submit)
                    .digest(a.block)
                    .with("anchor", a.kind.as_str())
                    .with("content", a.content.to_string())
                    .with("round", r)
                    .with("payload_len", a.payload_len as u64),
            );
        }
        let (outcome, accepted, accuracy) = match &report.outcome {
            RoundOutcome::Finalized(res) => ("finalized", res.accepted.len(), Some(res.global_accuracy)),
            RoundOutcome::Void(VoidReason::QuorumNotMet { accepted, .. }) => ("quorum_not_met", *accepted, None),
            RoundOutcome::Void(VoidReason::NoReliableDevices) => ("no_reliable_devices", 0, None),
        };
        let unreliable: Vec<String> = self
            .dapp
            .reputation()
            .records()
            .filter(|rec| rec.score < self.cfg.threshold)
            .map(|rec| rec.device_id.to_string())
            .collect();
        let record = RoundRecord {
            round: r,
            start_us: self.round_start.as_micros(),
            end_us: now.as_micros(),
            outcome: outcome.into(),
            accepted,
            rejections: report.rejections.iter().map(|(d, reason)| (d.to_string(), reason.to_string())).collect(),
            global_accuracy: accuracy,
            model_accuracy: crate::fl::evaluate(self.dapp.global(), self.dapp.validation())?,
            unreliable,
        };
        // The round_end event carries the whole record so reports can be
        // rebuilt from the log alone.
        let mut end = Event::new(now, AGGREGATOR, EventKind::RoundEnd);
        if let serde_json::Value::Object(fields) = serde_json::to_value(&record).expect("record serializes") {
            end.detail = fields.into_iter().collect();
        }
        self.log.push(end);
        self.rounds.push(record);
        if (r as usize) < self.cfg.rounds {
            self.clock.schedule_in(SimDuration::ZERO, Ev::RoundStart(r + 1));
        } else {
            self.finished = true;
        }
        Ok(())
    }

    fn collect_confirmations(&mut self) {
        for c in self.dapp.ledger_mut().take_confirmations() {
            if let Some(submitted) = self.unconfirmed.remove(&c.id) {
                self.log.push(
                    Event::new(c.confirmed_at, COORDINATOR, EventKind::Confirm)
                        .digest(c.id)
                        .with("submitted_us", submitted.as_micros())
                        .with("delay_us", c.confirmed_at.saturating_since(submitted).as_micros()),
                );
            }
        }
    }

    fn arm_gossip(&mut self) {
        if let Some(next) = self.dapp.ledger().next_arrival() {
            if self.gossip_at.is_none_or(|at| next < at) {
                self.gossip_at = Some(next);
                self.clock.schedule(next.max(self.now()), Ev::Gossip).expect("not in the past");
            }
        }
    }
}

/// Runs repeat `repeat` (0-based) of `cfg` to completion: all rounds closed
/// and every anchor confirmed by a milestone.
pub fn run_repeat(cfg: &ExperimentConfig, repeat: usize) -> Result<RepeatOutput, SimError> {
    World::new(cfg, repeat)?.run(repeat)
}
