use super::milestone::confirm_attached;
use super::node::Inbound;
use super::{Block, BlockId, ConfirmedBlock, LedgerError, NodeId, NodeState};
use crate::time::{SimDuration, SimTime};

/// Pairwise one-way link latencies between ledger nodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatencyMatrix {
    n: usize,
    cells: Vec<SimDuration>,
}

impl LatencyMatrix {
    pub fn uniform(n: usize, latency: SimDuration) -> Self {
        let mut cells = vec![latency; n * n];
        for i in 0..n {
            cells[i * n + i] = SimDuration::ZERO;
        }
        Self { n, cells }
    }

    /// Builds a matrix from rows of latencies in seconds. Entries must be
    /// finite and non-negative and the matrix square.
    pub fn from_secs(rows: &[Vec<f64>]) -> Option<Self> {
        let n = rows.len();
        let mut cells = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return None;
            }
            for &s in row {
                if !s.is_finite() || s < 0.0 {
                    return None;
                }
                cells.push(SimDuration::from_secs_f64(s));
            }
        }
        Some(Self { n, cells })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, from: usize, to: usize) -> SimDuration {
        self.cells[from * self.n + to]
    }

    pub fn max(&self) -> SimDuration {
        self.cells.iter().copied().max().unwrap_or(SimDuration::ZERO)
    }
}

/// What happened during one delivery pass.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GossipReport {
    /// (node index, block) for every block that became attached.
    pub attached: Vec<(usize, BlockId)>,
    /// Confirmations triggered by milestones arriving at a node.
    pub confirmations: Vec<(usize, ConfirmedBlock)>,
}

/// All ledger nodes plus the links between them. Every node floods newly
/// attached blocks to all other nodes; per-link delivery is FIFO.
#[derive(Clone, Debug)]
pub struct Network {
    nodes: Vec<NodeState>,
    latency: LatencyMatrix,
    coordinator: NodeId,
    seq: u64,
}

impl Network {
    /// Creates `latency.len()` nodes with ids `1..=n`, each holding genesis.
    /// Milestones are only honoured when issued by `coordinator`.
    pub fn new(latency: LatencyMatrix, coordinator: NodeId) -> Self {
        let nodes = (0..latency.len()).map(|i| NodeState::new(NodeId(i as u32 + 1))).collect();
        Self { nodes, latency, coordinator, seq: 0 }
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn node(&self, index: usize) -> &NodeState {
        &self.nodes[index]
    }

    pub fn node_mut(&mut self, index: usize) -> &mut NodeState {
        &mut self.nodes[index]
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.nodes.iter().position(|n| n.node_id == id)
    }

    pub fn latency(&self) -> &LatencyMatrix {
        &self.latency
    }

    pub fn coordinator(&self) -> NodeId {
        self.coordinator
    }

    /// Attaches a locally produced block at node `index` and sends it (and
    /// any blocks it released from the orphan buffer) to every other node.
    pub fn attach_local(&mut self, index: usize, block: Block, now: SimTime) -> Result<GossipReport, LedgerError> {
        let attached = self.nodes[index].attach_block(block)?;
        let mut report = GossipReport::default();
        self.after_attach(index, None, attached, now, &mut report);
        Ok(report)
    }

    fn after_attach(
        &mut self,
        index: usize,
        from: Option<usize>,
        attached: Vec<BlockId>,
        now: SimTime,
        report: &mut GossipReport,
    ) {
        for id in attached {
            report.attached.push((index, id));
            let block = self.nodes[index].blocks[&id].clone();
            if block.is_milestone() && block.issuer == self.coordinator {
                for c in confirm_attached(&mut self.nodes[index], &id, now) {
                    report.confirmations.push((index, c));
                }
            }
            for to in 0..self.nodes.len() {
                if to == index || Some(to) == from {
                    continue;
                }
                let arrival = now + self.latency.get(index, to);
                self.nodes[to].inbox.push_back(Inbound { block: block.clone(), arrival, from: index });
            }
        }
    }

    /// Earliest pending arrival across all inboxes.
    pub fn next_arrival(&self) -> Option<SimTime> {
        self.nodes.iter().flat_map(|n| n.inbox.iter().map(|m| m.arrival)).min()
    }

    /// Delivers every in-flight block whose arrival time is `<= now`, in
    /// arrival order (ties in send order). Blocks released by a delivery are
    /// relayed onward immediately, so zero-latency links converge within one
    /// call.
    pub fn gossip_step(&mut self, now: SimTime) -> GossipReport {
        let mut report = GossipReport::default();
        loop {
            let mut due: Vec<(SimTime, u64, usize, Inbound)> = Vec::new();
            for (i, node) in self.nodes.iter_mut().enumerate() {
                let mut keep = std::collections::VecDeque::with_capacity(node.inbox.len());
                while let Some(m) = node.inbox.pop_front() {
                    if m.arrival <= now {
                        self.seq += 1;
                        due.push((m.arrival, self.seq, i, m));
                    } else {
                        keep.push_back(m);
                    }
                }
                node.inbox = keep;
            }
            if due.is_empty() {
                break;
            }
            due.sort_by_key(|(t, seq, _, _)| (*t, *seq));
            for (arrival, _, i, m) in due {
                // Missing parents only buffer the block; anything else is a
                // malformed block from a peer and is dropped.
                if let Ok(attached) = self.nodes[i].attach_block(m.block) {
                    self.after_attach(i, Some(m.from), attached, arrival, &mut report);
                }
            }
        }
        report
    }

    /// Delivers everything still in flight.
    pub fn drain(&mut self) -> GossipReport {
        let mut report = GossipReport::default();
        while let Some(t) = self.next_arrival() {
            let step = self.gossip_step(t);
            report.attached.extend(step.attached);
            report.confirmations.extend(step.confirmations);
        }
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{create_block, select_tips, Coordinator};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn secs(s: f64) -> SimTime {
        SimTime::from_secs_f64(s)
    }

    fn issue(net: &mut Network, index: usize, tag: &str, t: f64, rng: &mut ChaCha8Rng) -> BlockId {
        let node = net.node(index);
        let parents = select_tips(node, 2, rng).unwrap();
        let b = create_block(node, parents, tag.as_bytes().to_vec(), node.node_id(), secs(t)).unwrap();
        let id = b.id;
        net.attach_local(index, b, secs(t)).unwrap();
        id
    }

    #[test]
    fn block_arrives_after_link_latency() {
        let mut net = Network::new(LatencyMatrix::uniform(2, SimDuration::from_secs_f64(0.05)), NodeId(2));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let id = issue(&mut net, 0, "x", 1.0, &mut rng);
        assert_eq!(net.next_arrival(), Some(secs(1.05)));
        net.gossip_step(secs(1.049_999));
        assert!(!net.node(1).contains(&id));
        let r = net.gossip_step(secs(1.05));
        assert_eq!(r.attached, vec![(1, id)]);
        assert!(net.node(1).contains(&id));
    }

    #[test]
    fn zero_latency_keeps_nodes_identical() {
        let mut net = Network::new(LatencyMatrix::uniform(3, SimDuration::ZERO), NodeId(2));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for step in 0..20 {
            let origin = step % 3;
            let t = step as f64 * 0.5;
            issue(&mut net, origin, &format!("b{step}"), t, &mut rng);
            net.gossip_step(secs(t));
            let keys: Vec<BTreeSet<BlockId>> =
                net.nodes().iter().map(|n| n.blocks.keys().copied().collect()).collect();
            assert!(keys.windows(2).all(|w| w[0] == w[1]), "diverged at step {step}");
        }
    }

    #[test]
    fn symmetric_latencies_converge_at_quiescence() {
        let lat = LatencyMatrix::from_secs(&[vec![0.0, 0.2, 0.3], vec![0.2, 0.0, 0.1], vec![0.3, 0.1, 0.0]]).unwrap();
        let mut net = Network::new(lat, NodeId(2));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = 0.0;
        for step in 0..30 {
            t += 0.07;
            net.gossip_step(secs(t));
            issue(&mut net, step % 3, &format!("b{step}"), t, &mut rng);
        }
        net.drain();
        let sets: Vec<BTreeSet<BlockId>> = net.nodes().iter().map(|n| n.blocks.keys().copied().collect()).collect();
        assert_eq!(sets[0], sets[1]);
        assert_eq!(sets[1], sets[2]);
        assert_eq!(sets[0].len(), 31);
        for n in net.nodes() {
            assert_eq!(n.buffered_len(), 0);
            assert_eq!(n.tips(), &n.recompute_tips());
        }
    }

    #[test]
    fn per_link_delivery_is_fifo() {
        let mut net = Network::new(LatencyMatrix::uniform(2, SimDuration::from_secs_f64(0.5)), NodeId(2));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sent: Vec<BlockId> = (0..5).map(|i| issue(&mut net, 0, &format!("m{i}"), 1.0 + i as f64 * 0.1, &mut rng)).collect();
        let r = net.drain();
        let got: Vec<BlockId> = r.attached.iter().filter(|(n, _)| *n == 1).map(|(_, id)| *id).collect();
        assert_eq!(got, sent);
    }

    #[test]
    fn milestone_confirms_on_receipt() {
        let mut net = Network::new(LatencyMatrix::uniform(2, SimDuration::from_secs_f64(0.05)), NodeId(2));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let id = issue(&mut net, 0, "u", 1.0, &mut rng);
        net.gossip_step(secs(1.05));
        let mut coord = Coordinator::new(NodeId(2), SimDuration::from_secs_f64(10.0));
        let m = coord.issue_milestone(net.node(1), secs(10.0)).unwrap();
        let local = net.attach_local(1, m.block.clone(), secs(10.0)).unwrap();
        assert!(local.confirmations.iter().any(|(n, c)| *n == 1 && c.id == id));
        let remote = net.gossip_step(secs(10.05));
        let c = remote.confirmations.iter().find(|(n, c)| *n == 0 && c.id == id).unwrap().1;
        assert_eq!(c.confirmed_at, secs(10.05));
        assert!(net.node(0).is_confirmed(&id));
    }

    #[test]
    fn rejects_bad_latency_rows() {
        assert!(LatencyMatrix::from_secs(&[vec![0.0, -1.0], vec![0.0, 0.0]]).is_none());
        assert!(LatencyMatrix::from_secs(&[vec![0.0, 1.0]]).is_none());
    }
}
