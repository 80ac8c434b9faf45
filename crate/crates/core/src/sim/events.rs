//! Newline-delimited JSON event log. Each line is one [`Event`]; metrics are
//! computed from these records alone.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    RoundStart,
    /// A device handed an update to the bus.
    Publish,
    /// An anchor block was issued on the ingress node.
    Submit,
    Reject,
    Milestone,
    /// An anchor block was confirmed on the coordinator's view.
    Confirm,
    RoundEnd,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("unit variant");
        f.write_str(v.as_str().expect("string"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t_us: u64,
    pub actor: String,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub detail: BTreeMap<String, Value>,
}

impl Event {
    pub fn new(t: SimTime, actor: impl Into<String>, kind: EventKind) -> Self {
        Self { t_us: t.as_micros(), actor: actor.into(), kind, digest: None, detail: BTreeMap::new() }
    }

    pub fn digest(mut self, d: impl fmt::Display) -> Self {
        self.digest = Some(d.to_string());
        self
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.detail.insert(key.to_owned(), value.into());
        self
    }

    pub fn time(&self) -> SimTime {
        SimTime::from_micros(self.t_us)
    }

    pub fn detail_u64(&self, key: &str) -> Option<u64> {
        self.detail.get(key).and_then(Value::as_u64)
    }

    pub fn detail_str(&self, key: &str) -> Option<&str> {
        self.detail.get(key).and_then(Value::as_str)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("event log line {line}: {source}")]
pub struct EventLogError {
    pub line: usize,
    #[source]
    pub source: serde_json::Error,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, e: Event) {
        self.events.push(e);
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, EventLogError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(line).map_err(|source| EventLogError { line: i + 1, source })?);
        }
        Ok(Self { events })
    }
}

impl FromIterator<Event> for EventLog {
    fn from_iter<I: IntoIterator<Item = Event>>(iter: I) -> Self {
        Self { events: iter.into_iter().collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let mut log = EventLog::new();
        log.push(Event::new(SimTime::from_micros(5), "adapter", EventKind::Submit).digest("ab").with("round", 1u64));
        log.push(Event::new(SimTime::from_micros(9), "coordinator", EventKind::Milestone));
        let text = log.to_jsonl();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"t_us":5,"actor":"adapter","kind":"submit","digest":"ab","detail":{"round":1}}"#
        );
        assert_eq!(EventLog::from_jsonl(&text).unwrap(), log);
        assert_eq!(EventKind::RoundStart.to_string(), "round_start");
        assert_eq!(EventLog::from_jsonl("{}\n").unwrap_err().line, 1);
    }
}
