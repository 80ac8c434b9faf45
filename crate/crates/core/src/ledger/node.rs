use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;

use super::{check_parent_list, Block, BlockId, LedgerError, NodeId};
use crate::time::SimTime;

/// A block in flight towards a node.
#[derive(Clone, Debug)]
pub(crate) struct Inbound {
    pub block: Block,
    pub arrival: SimTime,
    /// Index of the sending node in the network.
    pub from: usize,
}

/// One ledger node's local view of the DAG.
#[derive(Clone, Debug)]
pub struct NodeState {
    pub(crate) node_id: NodeId,
    pub(crate) blocks: BTreeMap<BlockId, Block>,
    /// Attachment order; drives snapshot export.
    pub(crate) order: Vec<BlockId>,
    pub(crate) tips: BTreeSet<BlockId>,
    referenced: BTreeSet<BlockId>,
    pub(crate) confirmed: BTreeSet<BlockId>,
    pub(crate) confirmed_at: BTreeMap<BlockId, SimTime>,
    /// Out-of-order blocks keyed by the parent they are waiting for.
    orphans: BTreeMap<BlockId, Vec<Block>>,
    buffered: BTreeSet<BlockId>,
    pub(crate) inbox: VecDeque<Inbound>,
}

impl NodeState {
    /// A node whose ledger holds only the genesis block.
    pub fn new(node_id: NodeId) -> Self {
        let mut state = Self::without_genesis(node_id);
        state.insert(Block::genesis());
        state
    }

    /// A node with an empty ledger. Only useful for exercising error paths.
    pub fn without_genesis(node_id: NodeId) -> Self {
        Self {
            node_id,
            blocks: BTreeMap::new(),
            order: Vec::new(),
            tips: BTreeSet::new(),
            referenced: BTreeSet::new(),
            confirmed: BTreeSet::new(),
            confirmed_at: BTreeMap::new(),
            orphans: BTreeMap::new(),
            buffered: BTreeSet::new(),
            inbox: VecDeque::new(),
        }
    }

    /// Rebuilds a node from stored blocks without validating them, keeping
    /// each block's stored id. Used to audit snapshots.
    pub fn from_blocks_unchecked(node_id: NodeId, blocks: Vec<Block>) -> Self {
        let mut state = Self::without_genesis(node_id);
        for b in blocks {
            state.insert(b);
        }
        state
    }

    pub fn node_id(&self) -> NodeId {
        self.node_id
    }

    pub fn contains(&self, id: &BlockId) -> bool {
        self.blocks.contains_key(id)
    }

    pub fn get(&self, id: &BlockId) -> Option<&Block> {
        self.blocks.get(id)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Blocks in attachment order.
    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.order.iter().filter_map(|id| self.blocks.get(id))
    }

    pub fn tips(&self) -> &BTreeSet<BlockId> {
        &self.tips
    }

    pub fn confirmed(&self) -> &BTreeSet<BlockId> {
        &self.confirmed
    }

    pub fn is_confirmed(&self, id: &BlockId) -> bool {
        self.confirmed.contains(id)
    }

    pub fn confirmed_at(&self, id: &BlockId) -> Option<SimTime> {
        self.confirmed_at.get(id).copied()
    }

    /// Number of blocks buffered while waiting for a parent.
    pub fn buffered_len(&self) -> usize {
        self.buffered.len()
    }

    pub fn inbox_len(&self) -> usize {
        self.inbox.len()
    }

    /// Tips recomputed from scratch: known blocks no known block references.
    pub fn recompute_tips(&self) -> BTreeSet<BlockId> {
        let referenced: BTreeSet<BlockId> = self.blocks.values().flat_map(|b| b.parents.iter().copied()).collect();
        self.blocks.keys().filter(|id| !referenced.contains(id)).copied().collect()
    }

    /// Every known block reachable from `roots` by following parent links,
    /// roots included.
    pub fn past_cone(&self, roots: &[BlockId]) -> BTreeSet<BlockId> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<BlockId> = roots.iter().copied().filter(|r| self.contains(r)).collect();
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            if let Some(b) = self.blocks.get(&id) {
                stack.extend(b.parents.iter().filter(|p| self.contains(p) && !seen.contains(p)));
            }
        }
        seen
    }

    /// Attaches `block`, returning the ids that became part of the ledger
    /// (the block itself plus any buffered descendants it released).
    ///
    /// A duplicate is a no-op. A block with a missing parent is buffered and
    /// reported as [`LedgerError::UnknownParent`]; it attaches automatically
    /// once the parent arrives.
    pub fn attach_block(&mut self, block: Block) -> Result<Vec<BlockId>, LedgerError> {
        if self.blocks.contains_key(&block.id) || self.buffered.contains(&block.id) {
            return Ok(Vec::new());
        }
        if block.recomputed_id() != block.id {
            return Err(LedgerError::IdMismatch(block.id));
        }
        if block.is_genesis() {
            if block.id != Block::genesis().id {
                return Err(LedgerError::InvalidParents(0));
            }
        } else {
            check_parent_list(&block.parents)?;
        }
        if let Some(missing) = self.first_missing_parent(&block) {
            let id = block.id;
            self.buffered.insert(id);
            self.orphans.entry(missing).or_default().push(block);
            return Err(LedgerError::UnknownParent { block: id, parent: missing });
        }

        let mut attached = Vec::new();
        let mut ready = vec![block];
        while let Some(b) = ready.pop() {
            let id = b.id;
            self.insert(b);
            attached.push(id);
            for waiting in self.orphans.remove(&id).unwrap_or_default() {
                match self.first_missing_parent(&waiting) {
                    None => {
                        self.buffered.remove(&waiting.id);
                        ready.push(waiting);
                    }
                    Some(other) => self.orphans.entry(other).or_default().push(waiting),
                }
            }
        }
        Ok(attached)
    }

    fn first_missing_parent(&self, block: &Block) -> Option<BlockId> {
        block.parents.iter().find(|p| !self.blocks.contains_key(p)).copied()
    }

    fn insert(&mut self, block: Block) {
        let id = block.id;
        for p in &block.parents {
            self.tips.remove(p);
            self.referenced.insert(*p);
        }
        if !self.referenced.contains(&id) {
            self.tips.insert(id);
        }
        self.order.push(id);
        self.blocks.insert(id, block);
    }

    /// Marks `ids` confirmed at `at`; returns those that were not already.
    pub(crate) fn mark_confirmed(&mut self, ids: impl IntoIterator<Item = BlockId>, at: SimTime) -> Vec<BlockId> {
        let mut newly = Vec::new();
        for id in ids {
            if self.confirmed.insert(id) {
                self.confirmed_at.insert(id, at);
                newly.push(id);
            }
        }
        newly
    }
}

/// Samples `min(k, |tips|)` distinct tips uniformly at random. The result is
/// sorted so that parent lists are canonical.
pub fn select_tips<R: Rng + ?Sized>(state: &NodeState, k: usize, rng: &mut R) -> Result<Vec<BlockId>, LedgerError> {
    if state.tips.is_empty() {
        return Err(LedgerError::EmptyLedger);
    }
    let tips: Vec<BlockId> = state.tips.iter().copied().collect();
    let amount = k.min(tips.len());
    let mut chosen: Vec<BlockId> = rand::seq::index::sample(rng, tips.len(), amount)
        .into_iter()
        .map(|i| tips[i])
        .collect();
    chosen.sort();
    Ok(chosen)
}
