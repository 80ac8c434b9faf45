//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tanglefl::dapp::{DappConfig, DappManager, DeviceRegistry, LedgerBackend, RoundConfig, SimLedger, Submission};
use tanglefl::fl::{init_model, make_synthetic_dataset, serialize_params, DataShard, ModelParams, ModelShape, SyntheticSpec};
use tanglefl::ids::DeviceId;
use tanglefl::ledger::{BlockId, LatencyMatrix};
use tanglefl::store::ContentStore;
use tanglefl::time::{SimDuration, SimTime};

pub const SHAPE: ModelShape = ModelShape { input: 8, hidden: 6, output: 4 };

pub fn credential(d: u32) -> Vec<u8> {
    format!("key-{d}").into_bytes()
}

pub struct Fixture {
    pub dapp: DappManager<SimLedger>,
    pub shards: Vec<DataShard>,
    pub initial: ModelParams,
}

/// `n` enrolled devices, a single-node ledger with a 10 s milestone interval.
pub fn fixture(n: usize, cfg: DappConfig) -> Fixture {
    let spec = SyntheticSpec { n_clients: n, total_samples: 30 * n, validation_samples: 200, seed: 5, ..SyntheticSpec::default() };
    let (shards, validation) = make_synthetic_dataset(&spec).unwrap();
    let mut registry = DeviceRegistry::new();
    for d in 0..n as u32 {
        registry.enroll(DeviceId(d), &credential(d));
    }
    let initial = init_model(3, SHAPE).unwrap();
    let ledger = SimLedger::local(SimDuration::from_secs_f64(10.0), ChaCha8Rng::seed_from_u64(9));
    let dapp = DappManager::new(cfg, registry, ledger, ContentStore::new(), validation, initial.clone()).unwrap();
    Fixture { dapp, shards, initial }
}

pub fn submission(d: u32, round: u64, params: &ModelParams, n_samples: u64) -> Submission {
    Submission {
        device_id: DeviceId(d),
        credential: credential(d),
        round,
        shape: params.shape,
        n_samples,
        params: serialize_params(params),
    }
}

pub fn round_cfg(round: u64, quorum: usize) -> RoundConfig {
    let start = SimTime::from_secs_f64(100.0 * round as f64);
    RoundConfig { round, start, deadline: start + SimDuration::from_secs_f64(30.0), quorum, alpha: 0.5, threshold: 0.2 }
}

/// Deterministic parameters near `base`, perturbed by `scale`.
pub fn perturbed(base: &ModelParams, seed: u64, scale: f64) -> ModelParams {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = base.clone();
    for w in &mut p.weights {
        *w += scale * (rng.random::<f64>() - 0.5);
    }
    p
}

/// `(anchor, submitted, confirmed)` per anchor, in submission order.
pub type AnchorTimes = Vec<(BlockId, SimTime, SimTime)>;

/// Drives a two-node ledger: anchors at `submit_s` on the ingress node,
/// milestones every `interval_s` starting at `phase_s`, gossip latency
/// `latency_s`. Runs until every anchor is confirmed and returns
/// (anchor, submitted, confirmed) plus the per-milestone confirmed sets.
pub fn drive(
    submit_s: &[f64],
    interval_s: f64,
    phase_s: f64,
    latency_s: f64,
    seed: u64,
) -> (AnchorTimes, Vec<BTreeSet<BlockId>>) {
    let interval = SimDuration::from_secs_f64(interval_s);
    let latency = LatencyMatrix::uniform(2, SimDuration::from_secs_f64(latency_s));
    let mut ledger = SimLedger::new(latency, interval, 2, ChaCha8Rng::seed_from_u64(seed));
    let mut submits: Vec<SimTime> = submit_s.iter().map(|&s| SimTime::from_secs_f64(s)).collect();
    submits.sort();

    let mut anchors: Vec<(BlockId, SimTime)> = Vec::new();
    let mut confirmed_at: BTreeMap<BlockId, SimTime> = BTreeMap::new();
    let mut snapshots = Vec::new();
    let mut next_ms = SimTime::from_secs_f64(phase_s);
    let mut pending = submits.into_iter().peekable();
    loop {
        let all_in = pending.peek().is_none();
        if all_in && anchors.iter().all(|(id, _)| confirmed_at.contains_key(id)) {
            break;
        }
        // Milestones win ties with submissions.
        let now = match pending.peek() {
            Some(&t) if t < next_ms => t,
            _ => next_ms,
        };
        ledger.gossip_step(now);
        if now == next_ms {
            ledger.issue_milestone(now).unwrap();
            next_ms += interval;
            snapshots.push(ledger.reference_node().confirmed().clone());
        } else {
            let t = pending.next().unwrap();
            let id = ledger.anchor(vec![anchors.len() as u8; 16], t).unwrap();
            anchors.push((id, t));
        }
        for c in ledger.take_confirmations() {
            confirmed_at.entry(c.id).or_insert(c.confirmed_at);
        }
        assert!(snapshots.len() < 10_000, "ledger stalled");
    }
    let rows = anchors.into_iter().map(|(id, t)| (id, t, confirmed_at[&id])).collect();
    (rows, snapshots)
}
