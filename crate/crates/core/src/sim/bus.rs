//! In-process publish/subscribe bus with MQTT topic semantics (QoS 0).
//!
//! Topics are `/`-separated levels. In subscription patterns `+` matches
//! exactly one level and a trailing `#` matches any number of remaining
//! levels, including none.

use crate::time::{SimDuration, SimTime};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TopicMessage {
    pub topic: String,
    pub payload: Vec<u8>,
    pub published_at: SimTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubscriptionId(pub usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub subscription: SubscriptionId,
    pub deliver_at: SimTime,
    pub message: TopicMessage,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BusError {
    #[error("topic must be non-empty")]
    EmptyTopic,
    #[error("wildcards are not allowed in published topic {0:?}")]
    WildcardInTopic(String),
    #[error("invalid subscription pattern {0:?}")]
    InvalidPattern(String),
}

/// `true` iff `topic` matches subscription `pattern`.
pub fn topic_matches(pattern: &str, topic: &str) -> bool {
    let mut p = pattern.split('/');
    let mut t = topic.split('/');
    loop {
        match (p.next(), t.next()) {
            (Some("#"), _) => return true,
            (Some("+"), Some(_)) => {}
            (Some(a), Some(b)) if a == b => {}
            (None, None) => return true,
            _ => return false,
        }
    }
}

fn valid_pattern(pattern: &str) -> bool {
    let levels: Vec<&str> = pattern.split('/').collect();
    levels.iter().enumerate().all(|(i, l)| match *l {
        "#" => i == levels.len() - 1,
        "+" => true,
        other => !other.contains(['#', '+']),
    })
}

/// Subscriptions plus a fixed delivery latency. Publishing returns the
/// deliveries for the caller's scheduler; with a constant latency and a
/// tie-breaking clock this preserves per-topic FIFO order.
#[derive(Clone, Debug)]
pub struct TopicBus {
    latency: SimDuration,
    subs: Vec<String>,
}

impl TopicBus {
    pub fn new(latency: SimDuration) -> Self {
        Self { latency, subs: Vec::new() }
    }

    pub fn subscribe(&mut self, pattern: &str) -> Result<SubscriptionId, BusError> {
        if pattern.is_empty() {
            return Err(BusError::EmptyTopic);
        }
        if !valid_pattern(pattern) {
            return Err(BusError::InvalidPattern(pattern.to_owned()));
        }
        self.subs.push(pattern.to_owned());
        Ok(SubscriptionId(self.subs.len() - 1))
    }

    /// Deliveries to every matching subscription, in subscription order.
    /// No match means the message is dropped.
    pub fn publish(&self, topic: &str, payload: Vec<u8>, now: SimTime) -> Result<Vec<Delivery>, BusError> {
        if topic.is_empty() {
            return Err(BusError::EmptyTopic);
        }
        if topic.contains(['#', '+']) {
            return Err(BusError::WildcardInTopic(topic.to_owned()));
        }
        let message = TopicMessage { topic: topic.to_owned(), payload, published_at: now };
        Ok(self
            .subs
            .iter()
            .enumerate()
            .filter(|(_, p)| topic_matches(p, topic))
            .map(|(i, _)| Delivery { subscription: SubscriptionId(i), deliver_at: now + self.latency, message: message.clone() })
            .collect())
    }
}
