//! Deterministic discrete-event simulation: clock, topic bus, device actors
//! and the world that ties them to the ledger and the DApp manager.

mod bus;
mod clock;
mod device;
mod events;
mod world;

pub use bus::{topic_matches, BusError, Delivery, SubscriptionId, TopicBus, TopicMessage};
pub use clock::{PastTime, SimClock};
pub use device::{device_round, Behavior, DelayModel, DeviceActor, PlannedSubmission, SPAM_COPIES};
pub use events::{Event, EventKind, EventLog, EventLogError};
pub use world::{run_repeat, RepeatOutput, RoundRecord, ADAPTER, AGGREGATOR, COORDINATOR, VERIFIER};

use crate::dapp::RoundError;
use crate::fl::FlError;
use crate::ledger::LedgerError;
use crate::time::SimTime;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("setup: {0}")]
    Setup(String),
    #[error(transparent)]
    Fl(#[from] FlError),
    #[error(transparent)]
    Round(#[from] RoundError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("simulation stalled at {at} with {unconfirmed} anchors unconfirmed")]
    Stalled { at: SimTime, unconfirmed: usize },
}
