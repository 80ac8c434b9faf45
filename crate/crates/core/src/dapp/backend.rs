//! Ledger access used by the DApp manager.
//!
//! [`LedgerBackend`] is the seam where a client for a real ledger node would
//! plug in; [`SimLedger`] drives the in-process simulated network.

use rand_chacha::ChaCha8Rng;

use crate::ledger::{
    create_block, select_tips, Block, BlockId, ConfirmedBlock, Coordinator, LatencyMatrix, LedgerError, Milestone,
    Network, NodeId, NodeState,
};
use crate::time::{SimDuration, SimTime};

pub trait LedgerBackend {
    /// Wraps `payload` in a block, attaches it and returns its id.
    fn anchor(&mut self, payload: Vec<u8>, now: SimTime) -> Result<BlockId, LedgerError>;
    fn block(&self, id: &BlockId) -> Option<&Block>;
    /// Confirmed by a milestone, as seen by the ledger's reference node.
    fn is_confirmed(&self, id: &BlockId) -> bool;
}

/// Simulated permissioned network. Node index 0 is the ingress node the
/// adapter writes to; node index 1 (or 0 if there is only one node) runs
/// the coordinator and is the reference view for confirmation.
#[derive(Clone, Debug)]
pub struct SimLedger {
    network: Network,
    coordinator: Coordinator,
    ingress: usize,
    coord_index: usize,
    tip_k: usize,
    rng: ChaCha8Rng,
    confirmations: Vec<ConfirmedBlock>,
}

impl SimLedger {
    pub fn new(latency: LatencyMatrix, milestone_interval: SimDuration, tip_k: usize, rng: ChaCha8Rng) -> Self {
        assert!(!latency.is_empty(), "at least one ledger node");
        let coord_index = latency.len().min(2) - 1;
        let coordinator_id = NodeId(coord_index as u32 + 1);
        Self {
            network: Network::new(latency, coordinator_id),
            coordinator: Coordinator::new(coordinator_id, milestone_interval),
            ingress: 0,
            coord_index,
            tip_k: tip_k.max(1),
            rng,
            confirmations: Vec::new(),
        }
    }

    /// Single node, zero latency: handy for tests and examples.
    pub fn local(milestone_interval: SimDuration, rng: ChaCha8Rng) -> Self {
        Self::new(LatencyMatrix::uniform(1, SimDuration::ZERO), milestone_interval, 2, rng)
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn coordinator(&self) -> &Coordinator {
        &self.coordinator
    }

    pub fn reference_node(&self) -> &NodeState {
        self.network.node(self.coord_index)
    }

    pub fn ingress_node(&self) -> &NodeState {
        self.network.node(self.ingress)
    }

    fn collect(&mut self, report: crate::ledger::GossipReport) {
        let idx = self.coord_index;
        self.confirmations.extend(report.confirmations.into_iter().filter(|(n, _)| *n == idx).map(|(_, c)| c));
    }

    /// Issues a milestone on the coordinator node and attaches it there.
    pub fn issue_milestone(&mut self, now: SimTime) -> Result<Milestone, LedgerError> {
        let m = self.coordinator.issue_milestone(self.network.node(self.coord_index), now)?;
        let report = self.network.attach_local(self.coord_index, m.block.clone(), now)?;
        self.collect(report);
        Ok(m)
    }

    pub fn next_arrival(&self) -> Option<SimTime> {
        self.network.next_arrival()
    }

    pub fn gossip_step(&mut self, now: SimTime) {
        let report = self.network.gossip_step(now);
        self.collect(report);
    }

    pub fn drain(&mut self) {
        let report = self.network.drain();
        self.collect(report);
    }

    /// Confirmations on the reference node since the last call, in the
    /// order they happened.
    pub fn take_confirmations(&mut self) -> Vec<ConfirmedBlock> {
        std::mem::take(&mut self.confirmations)
    }
}

impl LedgerBackend for SimLedger {
    fn anchor(&mut self, payload: Vec<u8>, now: SimTime) -> Result<BlockId, LedgerError> {
        let node = self.network.node(self.ingress);
        let parents = select_tips(node, self.tip_k, &mut self.rng)?;
        let block = create_block(node, parents, payload, node.node_id(), now)?;
        let id = block.id;
        let report = self.network.attach_local(self.ingress, block, now)?;
        self.collect(report);
        Ok(id)
    }

    fn block(&self, id: &BlockId) -> Option<&Block> {
        self.network.node(self.ingress).get(id).or_else(|| self.reference_node().get(id))
    }

    fn is_confirmed(&self, id: &BlockId) -> bool {
        self.reference_node().is_confirmed(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn anchors_confirm_after_milestone_reaches_coordinator() {
        let lat = LatencyMatrix::uniform(2, SimDuration::from_secs_f64(0.05));
        let mut l = SimLedger::new(lat, SimDuration::from_secs_f64(10.0), 2, ChaCha8Rng::seed_from_u64(1));
        let t = SimTime::from_secs_f64;
        let a = l.anchor(b"x".to_vec(), t(1.0)).unwrap();
        assert!(l.block(&a).is_some());
        l.issue_milestone(t(1.01)).unwrap();
        assert!(!l.is_confirmed(&a), "block still in flight to the coordinator");
        l.gossip_step(t(1.05));
        l.issue_milestone(t(11.01)).unwrap();
        assert!(l.is_confirmed(&a));
        let c = l.take_confirmations();
        let mine = c.iter().find(|c| c.id == a).unwrap();
        assert_eq!(mine.confirmed_at, t(11.01));
        assert!(l.take_confirmations().is_empty());
    }

    #[test]
    fn single_node_ledger() {
        let mut l = SimLedger::local(SimDuration::from_secs_f64(1.0), ChaCha8Rng::seed_from_u64(1));
        let a = l.anchor(b"x".to_vec(), SimTime::ZERO).unwrap();
        l.issue_milestone(SimTime::ZERO).unwrap();
        assert!(l.is_confirmed(&a));
    }
}
