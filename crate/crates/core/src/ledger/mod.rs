//! Permissioned Tangle-style DAG ledger.
//!
//! Blocks reference 1..=8 parents. A coordinator periodically issues
//! milestones; everything in a milestone's past cone becomes confirmed.
//! Nodes exchange blocks over latency-delayed FIFO links ([`Network`]).

mod gossip;
mod integrity;
mod milestone;
mod node;
mod snapshot;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::hash::{hash_bytes, Digest256};
use crate::time::SimTime;

pub use gossip::{GossipReport, LatencyMatrix, Network};
pub use integrity::{verify_chain_integrity, IntegrityViolation};
pub use milestone::{confirm, milestone_index, ConfirmedBlock, Coordinator, Milestone, MILESTONE_MARKER};
pub use node::{select_tips, NodeState};
pub use snapshot::{read_snapshot, write_snapshot, SnapshotError};

/// Largest payload a block may carry, in bytes.
pub const MAX_PAYLOAD: usize = 32 * 1024;
/// Most parents a block may reference.
pub const MAX_PARENTS: usize = 8;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockId(pub Digest256);

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl fmt::Debug for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlockId({:?})", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node-{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LedgerError {
    #[error("payload of {len} bytes exceeds the {MAX_PAYLOAD}-byte limit")]
    PayloadTooLarge { len: usize },
    #[error("block {block} references unknown parent {parent}")]
    UnknownParent { block: BlockId, parent: BlockId },
    #[error("block must reference 1..={MAX_PARENTS} distinct parents, got {0}")]
    InvalidParents(usize),
    #[error("block {0} does not hash to its id")]
    IdMismatch(BlockId),
    #[error("ledger has no tips (missing genesis)")]
    EmptyLedger,
    #[error("milestone not due until {due}, now {now}")]
    TooEarly { now: SimTime, due: SimTime },
}

/// A ledger block. `id` is always derived from the other fields via
/// [`Block::canonical_encoding`], except for blocks read back from a
/// snapshot, which keep the stored id so tampering can be detected.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Block {
    pub parents: Vec<BlockId>,
    pub payload: Vec<u8>,
    pub issuer: NodeId,
    pub issued_at: SimTime,
    pub id: BlockId,
}

impl Block {
    /// Canonical encoding hashed into the block id. All integers are
    /// little-endian: parent count (u32), parent ids (32 bytes each),
    /// payload length (u32), payload, issuer (u32), timestamp (u64 µs).
    pub fn canonical_encoding(parents: &[BlockId], payload: &[u8], issuer: NodeId, issued_at: SimTime) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 32 * parents.len() + 4 + payload.len() + 12);
        out.extend_from_slice(&(parents.len() as u32).to_le_bytes());
        for p in parents {
            out.extend_from_slice(p.0.as_bytes());
        }
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(payload);
        out.extend_from_slice(&issuer.0.to_le_bytes());
        out.extend_from_slice(&issued_at.as_micros().to_le_bytes());
        out
    }

    pub fn derive_id(parents: &[BlockId], payload: &[u8], issuer: NodeId, issued_at: SimTime) -> BlockId {
        BlockId(hash_bytes(&Self::canonical_encoding(parents, payload, issuer, issued_at)))
    }

    /// Builds a block and derives its id without checking ledger rules.
    pub fn new_unchecked(parents: Vec<BlockId>, payload: Vec<u8>, issuer: NodeId, issued_at: SimTime) -> Self {
        let id = Self::derive_id(&parents, &payload, issuer, issued_at);
        Self { parents, payload, issuer, issued_at, id }
    }

    /// The single parentless block every ledger starts from.
    pub fn genesis() -> Self {
        Self::new_unchecked(Vec::new(), Vec::new(), NodeId(0), SimTime::ZERO)
    }

    pub fn is_genesis(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn recomputed_id(&self) -> BlockId {
        Self::derive_id(&self.parents, &self.payload, self.issuer, self.issued_at)
    }

    pub fn is_milestone(&self) -> bool {
        milestone_index(&self.payload).is_some()
    }
}

/// Creates a block on top of `parents`, all of which must be known to `state`.
pub fn create_block(
    state: &NodeState,
    parents: Vec<BlockId>,
    payload: Vec<u8>,
    issuer: NodeId,
    now: SimTime,
) -> Result<Block, LedgerError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(LedgerError::PayloadTooLarge { len: payload.len() });
    }
    check_parent_list(&parents)?;
    let block = Block::new_unchecked(parents, payload, issuer, now);
    if let Some(missing) = block.parents.iter().find(|p| !state.contains(p)) {
        return Err(LedgerError::UnknownParent { block: block.id, parent: *missing });
    }
    Ok(block)
}

fn check_parent_list(parents: &[BlockId]) -> Result<(), LedgerError> {
    if parents.is_empty() || parents.len() > MAX_PARENTS {
        return Err(LedgerError::InvalidParents(parents.len()));
    }
    let mut sorted = parents.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != parents.len() {
        return Err(LedgerError::InvalidParents(parents.len()));
    }
    Ok(())
}
