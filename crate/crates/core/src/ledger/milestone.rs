use std::collections::BTreeSet;

use super::{create_block, Block, BlockId, LedgerError, NodeId, NodeState, MAX_PARENTS};
use crate::time::{SimDuration, SimTime};

/// Payload prefix that marks a milestone block; followed by the index as u64 LE.
pub const MILESTONE_MARKER: &[u8; 8] = b"TFL-MS\0\x01";

/// Decodes a milestone index from a block payload.
pub fn milestone_index(payload: &[u8]) -> Option<u64> {
    let rest = payload.strip_prefix(MILESTONE_MARKER.as_slice())?;
    let bytes: [u8; 8] = rest.try_into().ok()?;
    Some(u64::from_le_bytes(bytes))
}

fn milestone_payload(index: u64) -> Vec<u8> {
    let mut p = MILESTONE_MARKER.to_vec();
    p.extend_from_slice(&index.to_le_bytes());
    p
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Milestone {
    pub block: Block,
    pub index: u64,
    /// Past cone of the milestone's parents on the issuing node.
    pub confirmed: BTreeSet<BlockId>,
}

/// A block confirmed by a milestone, with its confirmation delay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConfirmedBlock {
    pub id: BlockId,
    pub submitted_at: SimTime,
    pub confirmed_at: SimTime,
}

impl ConfirmedBlock {
    pub fn delay(&self) -> SimDuration {
        self.confirmed_at.saturating_since(self.submitted_at)
    }
}

/// Issues milestones at a fixed minimum interval.
#[derive(Clone, Debug)]
pub struct Coordinator {
    pub node_id: NodeId,
    pub interval: SimDuration,
    last: Option<(u64, SimTime)>,
}

impl Coordinator {
    pub fn new(node_id: NodeId, interval: SimDuration) -> Self {
        Self { node_id, interval, last: None }
    }

    pub fn last_index(&self) -> u64 {
        self.last.map_or(0, |(i, _)| i)
    }

    pub fn last_issued_at(&self) -> Option<SimTime> {
        self.last.map(|(_, t)| t)
    }

    /// Earliest time the next milestone may be issued.
    pub fn next_due(&self) -> SimTime {
        self.last.map_or(SimTime::ZERO, |(_, t)| t + self.interval)
    }

    /// Issues the next milestone over the coordinator node's current tips.
    /// If there are more than [`MAX_PARENTS`] tips the oldest are referenced;
    /// the rest wait for the next milestone.
    pub fn issue_milestone(&mut self, state: &NodeState, now: SimTime) -> Result<Milestone, LedgerError> {
        let due = self.next_due();
        if self.last.is_some() && now < due {
            return Err(LedgerError::TooEarly { now, due });
        }
        if state.tips().is_empty() {
            return Err(LedgerError::EmptyLedger);
        }
        let mut tips: Vec<&Block> = state.tips().iter().filter_map(|id| state.get(id)).collect();
        tips.sort_by_key(|b| (b.issued_at, b.id));
        let mut parents: Vec<BlockId> = tips.iter().take(MAX_PARENTS).map(|b| b.id).collect();
        parents.sort();

        let index = self.last_index() + 1;
        let block = create_block(state, parents, milestone_payload(index), self.node_id, now)?;
        let confirmed = state.past_cone(&block.parents);
        self.last = Some((index, now));
        Ok(Milestone { block, index, confirmed })
    }
}

/// Attaches `milestone` to `state` (if not already known) and confirms its
/// past cone. Returns the newly confirmed blocks in id order, each with the
/// delay from its issue time to `now`.
pub fn confirm(state: &mut NodeState, milestone: &Milestone, now: SimTime) -> Result<Vec<ConfirmedBlock>, LedgerError> {
    state.attach_block(milestone.block.clone())?;
    Ok(confirm_attached(state, &milestone.block.id, now))
}

/// Confirms the past cone of an already attached milestone block.
pub(crate) fn confirm_attached(state: &mut NodeState, milestone_block: &BlockId, now: SimTime) -> Vec<ConfirmedBlock> {
    let parents = match state.get(milestone_block) {
        Some(b) => b.parents.clone(),
        None => return Vec::new(),
    };
    let cone = state.past_cone(&parents);
    let newly = state.mark_confirmed(cone, now);
    newly
        .into_iter()
        .map(|id| ConfirmedBlock { id, submitted_at: state.get(&id).map_or(now, |b| b.issued_at), confirmed_at: now })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::create_block;

    fn secs(s: f64) -> SimTime {
        SimTime::from_secs_f64(s)
    }

    fn coord() -> Coordinator {
        Coordinator::new(NodeId(2), SimDuration::from_secs_f64(10.0))
    }

    fn issue_and_confirm(c: &mut Coordinator, st: &mut NodeState, t: f64) -> (Milestone, Vec<ConfirmedBlock>) {
        let m = c.issue_milestone(st, secs(t)).unwrap();
        let newly = confirm(st, &m, secs(t)).unwrap();
        (m, newly)
    }

    /// Reachability oracle: a block is in the cone iff some parent chain from
    /// a root reaches it. Checked by exhaustive search per block.
    fn reachable_oracle(st: &NodeState, roots: &[BlockId]) -> BTreeSet<BlockId> {
        fn reaches(st: &NodeState, from: BlockId, target: BlockId) -> bool {
            if from == target {
                return true;
            }
            st.get(&from).is_some_and(|b| b.parents.iter().any(|p| reaches(st, *p, target)))
        }
        st.blocks.keys().filter(|t| roots.iter().any(|r| reaches(st, *r, **t))).copied().collect()
    }

    #[test]
    fn interval_boundary() {
        let mut c = coord();
        let mut st = NodeState::new(NodeId(2));
        issue_and_confirm(&mut c, &mut st, 20.0);
        assert!(matches!(c.issue_milestone(&st, secs(29.9)), Err(LedgerError::TooEarly { .. })));
        let m = c.issue_milestone(&st, secs(30.0)).unwrap();
        assert_eq!(m.index, 2);
    }

    #[test]
    fn first_milestone_confirms_genesis() {
        let mut c = coord();
        let mut st = NodeState::new(NodeId(2));
        let (m, newly) = issue_and_confirm(&mut c, &mut st, 10.0);
        let g = Block::genesis().id;
        assert_eq!(m.index, 1);
        assert_eq!(m.confirmed, BTreeSet::from([g]));
        assert_eq!(newly.iter().map(|c| c.id).collect::<Vec<_>>(), vec![g]);
    }

    #[test]
    fn five_unconfirmed_blocks_in_cone() {
        let mut c = coord();
        let mut st = NodeState::new(NodeId(2));
        issue_and_confirm(&mut c, &mut st, 0.0);
        let mut made = Vec::new();
        for i in 0..5 {
            let tips: Vec<BlockId> = st.tips().iter().copied().collect();
            let b = create_block(&st, tips, format!("u{i}").into_bytes(), NodeId(1), secs(1.0 + i as f64)).unwrap();
            made.push(b.id);
            st.attach_block(b).unwrap();
        }
        let (m, newly) = issue_and_confirm(&mut c, &mut st, 10.0);
        assert_eq!(m.confirmed, reachable_oracle(&st, &m.block.parents));
        let newly: BTreeSet<BlockId> = newly.iter().map(|c| c.id).collect();
        for id in &made {
            assert!(newly.contains(id));
        }
        // The five updates plus the first milestone block.
        assert_eq!(newly.len(), 6);
    }

    #[test]
    fn chain_confirmed_through_head() {
        let mut st = NodeState::new(NodeId(2));
        let g = Block::genesis().id;
        let a = create_block(&st, vec![g], b"A".to_vec(), NodeId(1), secs(1.0)).unwrap();
        st.attach_block(a.clone()).unwrap();
        let b = create_block(&st, vec![a.id], b"B".to_vec(), NodeId(1), secs(2.0)).unwrap();
        st.attach_block(b.clone()).unwrap();
        let cc = create_block(&st, vec![b.id], b"C".to_vec(), NodeId(1), secs(3.0)).unwrap();
        st.attach_block(cc.clone()).unwrap();
        let mut c = coord();
        let (_, newly) = issue_and_confirm(&mut c, &mut st, 10.0);
        let newly: BTreeSet<BlockId> = newly.iter().map(|c| c.id).collect();
        assert_eq!(newly, BTreeSet::from([g, a.id, b.id, cc.id]));
    }

    #[test]
    fn empty_delta_confirms_only_previous_milestone() {
        let mut c = coord();
        let mut st = NodeState::new(NodeId(2));
        let (m1, _) = issue_and_confirm(&mut c, &mut st, 10.0);
        let (m2, newly) = issue_and_confirm(&mut c, &mut st, 20.0);
        // Nothing but the previous milestone block itself is new.
        assert_eq!(newly.iter().map(|c| c.id).collect::<Vec<_>>(), vec![m1.block.id]);
        let again = confirm(&mut st, &m2, secs(21.0)).unwrap();
        assert!(again.is_empty());
    }

    #[test]
    fn confirmation_delay_is_forced() {
        let mut st = NodeState::new(NodeId(2));
        let mut c = coord();
        issue_and_confirm(&mut c, &mut st, 0.0);
        let tips: Vec<BlockId> = st.tips().iter().copied().collect();
        let b = create_block(&st, tips, b"late".to_vec(), NodeId(1), secs(9.9)).unwrap();
        st.attach_block(b.clone()).unwrap();
        let (_, newly) = issue_and_confirm(&mut c, &mut st, 10.0);
        let hit = newly.iter().find(|c| c.id == b.id).unwrap();
        assert_eq!(hit.delay().as_micros(), 100_000);
    }

    #[test]
    fn marker_round_trip() {
        assert_eq!(milestone_index(&milestone_payload(17)), Some(17));
        assert_eq!(milestone_index(b"kind=DeviceUpdate"), None);
    }
}
