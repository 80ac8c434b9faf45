//! Simulated IoT devices: local training on their shard plus seeded
//! compute and network delays. Some behave adversarially.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dapp::Submission;
use crate::fl::{local_train, serialize_params, DataShard, FlError, ModelParams, TrainConfig};
use crate::ids::DeviceId;
use crate::seed::{self, Stream};
use crate::time::SimDuration;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Honest,
    /// Publishes Gaussian noise of the right shape instead of a trained model.
    RandomWeights,
    /// Trains honestly but labels every update with the previous round.
    StaleReplayer,
    /// Sends each honest update several times.
    DuplicateSpammer,
}

impl Behavior {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Honest => "honest",
            Self::RandomWeights => "random-weights",
            Self::StaleReplayer => "stale-replayer",
            Self::DuplicateSpammer => "duplicate-spammer",
        }
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Behavior {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('_', "-").as_str() {
            "honest" => Ok(Self::Honest),
            "random-weights" => Ok(Self::RandomWeights),
            "stale-replayer" | "stale-round" | "stale" => Ok(Self::StaleReplayer),
            "duplicate-spammer" | "duplicate" => Ok(Self::DuplicateSpammer),
            other => Err(format!("unknown adversary kind {other:?}")),
        }
    }
}

/// Lognormal delay whose median is `base_s`; `sigma` is the log-space
/// standard deviation. A zero base always yields zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    pub base_s: f64,
    pub sigma: f64,
}

impl DelayModel {
    pub const ZERO: DelayModel = DelayModel { base_s: 0.0, sigma: 0.0 };

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SimDuration {
        // Always consume one draw so streams stay aligned across configs.
        let z: f64 = StandardNormal.sample(rng);
        if self.base_s <= 0.0 {
            return SimDuration::ZERO;
        }
        SimDuration::from_secs_f64(self.base_s * (self.sigma * z).exp())
    }
}

pub const SPAM_COPIES: usize = 3;

#[derive(Clone, Debug)]
pub struct DeviceActor {
    pub device_id: DeviceId,
    pub shard: DataShard,
    pub credential: Vec<u8>,
    pub behavior: Behavior,
    pub compute: DelayModel,
    pub network: DelayModel,
    pub train: TrainConfig,
    pub adversary_scale: f64,
    rng: ChaCha8Rng,
}

impl DeviceActor {
    /// `seed` drives this device's jitter and training streams.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        device_id: DeviceId,
        shard: DataShard,
        credential: Vec<u8>,
        behavior: Behavior,
        compute: DelayModel,
        network: DelayModel,
        train: TrainConfig,
        seed: u64,
    ) -> Self {
        let train = TrainConfig { seed, ..train };
        Self {
            device_id,
            shard,
            credential,
            behavior,
            compute,
            network,
            train,
            adversary_scale: 1.0,
            rng: seed::rng(seed, Stream::Device, u64::from(device_id.0)),
        }
    }
}

/// A submission and how long after receiving the global model it is sent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlannedSubmission {
    pub after: SimDuration,
    pub submission: Submission,
}

/// Trains on the device's shard starting from `global` and plans the
/// resulting submission(s) at `compute + network` delay.
pub fn device_round(actor: &mut DeviceActor, global: &ModelParams, round: u64) -> Result<Vec<PlannedSubmission>, FlError> {
    let after = actor.compute.sample(&mut actor.rng) + actor.network.sample(&mut actor.rng);
    let cfg = TrainConfig { seed: seed::derive(actor.train.seed, Stream::Training, round), ..actor.train };
    let params = match actor.behavior {
        Behavior::RandomWeights => {
            let mut p = global.clone();
            for w in &mut p.weights {
                let z: f64 = StandardNormal.sample(&mut actor.rng);
                *w = actor.adversary_scale * z;
            }
            p
        }
        _ => local_train(global, &actor.shard, &cfg)?.params,
    };
    let round_label = match actor.behavior {
        Behavior::StaleReplayer => round.saturating_sub(1),
        _ => round,
    };
    let submission = Submission {
        device_id: actor.device_id,
        credential: actor.credential.clone(),
        round: round_label,
        shape: params.shape,
        n_samples: actor.shard.len() as u64,
        params: serialize_params(&params),
    };
    let copies = if actor.behavior == Behavior::DuplicateSpammer { SPAM_COPIES } else { 1 };
    Ok(vec![PlannedSubmission { after, submission }; copies])
}
