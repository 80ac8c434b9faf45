use std::fmt;

use serde::{Deserialize, Serialize};

use super::{BlockId, NodeState};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IntegrityViolation {
    /// The stored id does not re-derive from the block's content.
    IdMismatch { stored: BlockId, recomputed: BlockId },
    /// A parent reference resolves to no stored block.
    DanglingParent { block: BlockId, parent: BlockId },
}

impl fmt::Display for IntegrityViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::IdMismatch { stored, recomputed } => write!(f, "id mismatch: stored {stored}, content hashes to {recomputed}"),
            Self::DanglingParent { block, parent } => write!(f, "dangling parent: {block} references missing {parent}"),
        }
    }
}

/// Audits every stored block. The report is empty iff each block's id
/// re-derives from its content and every parent reference resolves.
pub fn verify_chain_integrity(state: &NodeState) -> Vec<IntegrityViolation> {
    let mut out = Vec::new();
    for (stored, block) in &state.blocks {
        let recomputed = block.recomputed_id();
        if recomputed != *stored || block.id != *stored {
            out.push(IntegrityViolation::IdMismatch { stored: *stored, recomputed });
        }
        for p in &block.parents {
            if !state.blocks.contains_key(p) {
                out.push(IntegrityViolation::DanglingParent { block: *stored, parent: *p });
            }
        }
    }
    out
}
