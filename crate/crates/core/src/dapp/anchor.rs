//! On-ledger anchor payloads.
//!
//! Encoding is a sorted-key text map, one `key=value\n` line per field:
//! `content_hash`, `contributing` (global records), `device_id` (update
//! records), `kind`, `meta.<name>` entries, `round`. Byte-wise key order
//! happens to match that list, so the encoding is canonical.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::hash::Digest256;
use crate::ids::DeviceId;
use crate::ledger::{BlockId, MAX_PAYLOAD};
use crate::store::ContentId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorKind {
    DeviceUpdate,
    GlobalModel,
    ReputationDigest,
}

impl AnchorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::DeviceUpdate => "device_update",
            Self::GlobalModel => "global_model",
            Self::ReputationDigest => "reputation_digest",
        }
    }
}

impl fmt::Display for AnchorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnchorKind {
    type Err = AnchorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "device_update" => Ok(Self::DeviceUpdate),
            "global_model" => Ok(Self::GlobalModel),
            "reputation_digest" => Ok(Self::ReputationDigest),
            _ => Err(AnchorError::Malformed("unknown kind")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnchorError {
    #[error("malformed anchor record: {0}")]
    Malformed(&'static str),
    #[error("encoded anchor record is {0} bytes, over the ledger payload limit")]
    TooLarge(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnchorRecord {
    pub kind: AnchorKind,
    pub device_id: Option<DeviceId>,
    pub round: u64,
    pub content_hash: ContentId,
    pub contributing: Vec<BlockId>,
    pub meta: BTreeMap<String, String>,
}

const PAD_KEY: &str = "pad";

fn valid_meta_key(k: &str) -> bool {
    !k.is_empty() && k.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

fn valid_value(v: &str) -> bool {
    !v.contains('\n')
}

impl AnchorRecord {
    pub fn device_update(device: DeviceId, round: u64, content_hash: ContentId) -> Self {
        Self { kind: AnchorKind::DeviceUpdate, device_id: Some(device), round, content_hash, contributing: Vec::new(), meta: BTreeMap::new() }
    }

    /// A global record must name at least one contributing update block.
    pub fn global_model(round: u64, content_hash: ContentId, contributing: Vec<BlockId>) -> Result<Self, AnchorError> {
        if contributing.is_empty() {
            return Err(AnchorError::Malformed("global model without contributing updates"));
        }
        Ok(Self { kind: AnchorKind::GlobalModel, device_id: None, round, content_hash, contributing, meta: BTreeMap::new() })
    }

    pub fn reputation_digest(round: u64, content_hash: ContentId) -> Self {
        Self { kind: AnchorKind::ReputationDigest, device_id: None, round, content_hash, contributing: Vec::new(), meta: BTreeMap::new() }
    }

    /// Adds a metadata entry. Keys are `[A-Za-z0-9_]+`, values single-line.
    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        let value = value.into();
        assert!(valid_meta_key(key) && valid_value(&value), "invalid meta entry {key:?}");
        self.meta.insert(key.to_owned(), value);
        self
    }

    fn lines(&self) -> Vec<(String, String)> {
        let mut out = vec![("content_hash".to_owned(), self.content_hash.to_string())];
        if !self.contributing.is_empty() {
            let ids: Vec<String> = self.contributing.iter().map(|b| b.to_string()).collect();
            out.push(("contributing".to_owned(), ids.join(",")));
        }
        if let Some(d) = self.device_id {
            out.push(("device_id".to_owned(), d.to_string()));
        }
        out.push(("kind".to_owned(), self.kind.as_str().to_owned()));
        for (k, v) in &self.meta {
            out.push((format!("meta.{k}"), v.clone()));
        }
        out.push(("round".to_owned(), self.round.to_string()));
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut s = String::new();
        for (k, v) in self.lines() {
            s.push_str(&k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        }
        s.into_bytes()
    }

    /// Encodes with a `meta.pad` filler entry so the result is exactly
    /// `target` bytes when possible; records already at or above the target
    /// (less the pad line overhead) are left unpadded.
    pub fn encode_padded(&self, target: usize) -> Result<Vec<u8>, AnchorError> {
        let mut rec = self.clone();
        rec.meta.remove(PAD_KEY);
        let base = rec.encode().len();
        let overhead = "meta.pad=\n".len();
        if base + overhead <= target {
            rec.meta.insert(PAD_KEY.to_owned(), "0".repeat(target - base - overhead));
        }
        let bytes = rec.encode();
        if bytes.len() > MAX_PAYLOAD {
            return Err(AnchorError::TooLarge(bytes.len()));
        }
        Ok(bytes)
    }

    /// Strict inverse of [`AnchorRecord::encode`]: non-canonical input is
    /// rejected.
    pub fn decode(bytes: &[u8]) -> Result<Self, AnchorError> {
        let text = std::str::from_utf8(bytes).map_err(|_| AnchorError::Malformed("not utf-8"))?;
        let body = text.strip_suffix('\n').ok_or(AnchorError::Malformed("missing final newline"))?;
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        let mut meta = BTreeMap::new();
        for line in body.split('\n') {
            let (k, v) = line.split_once('=').ok_or(AnchorError::Malformed("line without '='"))?;
            if let Some(mk) = k.strip_prefix("meta.") {
                if !valid_meta_key(mk) {
                    return Err(AnchorError::Malformed("bad meta key"));
                }
                meta.insert(mk.to_owned(), v.to_owned());
            } else if fields.insert(k, v).is_some() {
                return Err(AnchorError::Malformed("repeated key"));
            }
        }
        let take = |k: &str| fields.get(k).copied();
        let kind: AnchorKind = take("kind").ok_or(AnchorError::Malformed("missing kind"))?.parse()?;
        let content_hash = take("content_hash")
            .and_then(|s| s.parse::<Digest256>().ok())
            .map(ContentId)
            .ok_or(AnchorError::Malformed("bad content_hash"))?;
        let round = take("round").and_then(|s| s.parse().ok()).ok_or(AnchorError::Malformed("bad round"))?;
        let device_id = match take("device_id") {
            Some(s) => Some(s.parse().map_err(|_| AnchorError::Malformed("bad device_id"))?),
            None => None,
        };
        let contributing = match take("contributing") {
            Some(s) => s
                .split(',')
                .map(|h| h.parse::<Digest256>().map(BlockId))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| AnchorError::Malformed("bad contributing id"))?,
            None => Vec::new(),
        };
        let known = ["content_hash", "contributing", "device_id", "kind", "round"];
        if fields.keys().any(|k| !known.contains(k)) {
            return Err(AnchorError::Malformed("unknown key"));
        }
        let shape_ok = match kind {
            AnchorKind::DeviceUpdate => device_id.is_some() && contributing.is_empty(),
            AnchorKind::GlobalModel => device_id.is_none() && !contributing.is_empty(),
            AnchorKind::ReputationDigest => device_id.is_none() && contributing.is_empty(),
        };
        if !shape_ok {
            return Err(AnchorError::Malformed("fields do not match kind"));
        }
        let rec = Self { kind, device_id, round, content_hash, contributing, meta };
        if rec.encode() != bytes {
            return Err(AnchorError::Malformed("not in canonical form"));
        }
        Ok(rec)
    }
}
