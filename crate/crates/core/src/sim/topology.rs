use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::delay::{ChannelAccess, DelayBreakdown, SIGNAL_SPEED};
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Sensor,
    SubSink,
    /// Forwarding-only node on a sub-sink to sub-sink path.
    Relay,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub role: Role,
    pub position: [f64; 2],
}

/// Directed link parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub distance_m: f64,
    pub bit_rate_bps: f64,
    /// Rate at which the sending node's buffer drains onto this link.
    pub service_rate_pps: f64,
    /// Independent per-transmission loss probability.
    pub loss_prob: f64,
}

impl LinkParams {
    pub fn propagation_delay(&self) -> f64 {
        self.distance_m / SIGNAL_SPEED
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LinkRef {
    pub from: NodeId,
    pub to: NodeId,
}

impl LinkRef {
    pub fn new(from: NodeId, to: NodeId) -> Self {
        Self { from, to }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    /// Node stops all activity: no forwarding, no local generation.
    Crash,
    /// Node keeps its local applications running but forwards nothing.
    DropAll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultTarget {
    Node(NodeId),
    Link(LinkRef),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fault {
    pub target: FaultTarget,
    pub at: f64,
    pub mode: FaultMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct RouteEntry {
    primary: NodeId,
    alternate: Option<NodeId>,
}

/// Nodes, directed links and static next-hop tables with fault overlay.
#[derive(Debug, Clone, Default)]
pub struct Topology {
    nodes: Vec<Node>,
    links: BTreeMap<LinkRef, LinkParams>,
    adjacency: Vec<Vec<NodeId>>,
    routes: HashMap<(NodeId, NodeId), RouteEntry>,
    faults: Vec<Fault>,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, role: Role, position: [f64; 2]) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node { id, role, position });
        self.adjacency.push(Vec::new());
        id
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id.index())
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        let (pa, pb) = (self.nodes[a.index()].position, self.nodes[b.index()].position);
        ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt()
    }

    /// Adds a directed link. Self-links and non-positive parameters are rejected.
    pub fn add_link(&mut self, link: LinkRef, params: LinkParams) -> Result<(), SimError> {
        if link.from == link.to {
            return Err(SimError::InvalidTopology(format!(
                "self-link at node {}",
                link.from
            )));
        }
        if self.node(link.from).is_none() || self.node(link.to).is_none() {
            return Err(SimError::UnknownLink {
                from: link.from,
                to: link.to,
            });
        }
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !(positive(params.distance_m)
            && positive(params.bit_rate_bps)
            && positive(params.service_rate_pps))
        {
            return Err(SimError::InvalidTopology(format!(
                "link {}->{} parameters must be strictly positive",
                link.from, link.to
            )));
        }
        if !(0.0..=1.0).contains(&params.loss_prob) {
            return Err(SimError::InvalidTopology(format!(
                "link {}->{} loss probability outside [0, 1]",
                link.from, link.to
            )));
        }
        if self.links.insert(link, params).is_none() {
            self.adjacency[link.from.index()].push(link.to);
        }
        Ok(())
    }

    /// Adds both directions with the geometric distance between the endpoints.
    pub fn connect(
        &mut self,
        a: NodeId,
        b: NodeId,
        bit_rate_bps: f64,
        service_rate_pps: f64,
    ) -> Result<(), SimError> {
        let distance_m = self.distance(a, b);
        let params = LinkParams {
            distance_m,
            bit_rate_bps,
            service_rate_pps,
            loss_prob: 0.0,
        };
        self.add_link(LinkRef::new(a, b), params)?;
        self.add_link(LinkRef::new(b, a), params)
    }

    pub fn link(&self, link: LinkRef) -> Result<&LinkParams, SimError> {
        self.links.get(&link).ok_or(SimError::UnknownLink {
            from: link.from,
            to: link.to,
        })
    }

    pub fn link_mut(&mut self, link: LinkRef) -> Result<&mut LinkParams, SimError> {
        self.links.get_mut(&link).ok_or(SimError::UnknownLink {
            from: link.from,
            to: link.to,
        })
    }

    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.adjacency[node.index()]
    }

    /// Per-hop delay for one packet entering `link.from`'s buffer behind
    /// `queue_depth` packets.
    pub fn sample_channel_delays<R: Rng + ?Sized>(
        &self,
        link: LinkRef,
        packet_bits: f64,
        queue_depth: usize,
        access: &ChannelAccess,
        rng: &mut R,
    ) -> Result<DelayBreakdown, SimError> {
        let params = self.link(link)?;
        if !(packet_bits > 0.0) {
            return Err(SimError::InvalidArgument("packet length must be positive"));
        }
        Ok(DelayBreakdown {
            b_del: queue_depth as f64 / params.service_rate_pps,
            ca_del: access.sample(rng),
            t_del: packet_bits / params.bit_rate_bps,
            p_del: params.propagation_delay(),
        })
    }

    /// Rebuilds every next-hop table by shortest hop count. The alternate
    /// entry is the runner-up neighbour that is also one hop closer, so
    /// either choice strictly decreases the remaining distance.
    pub fn compute_routes(&mut self) {
        self.routes.clear();
        let n = self.nodes.len();
        for dest in 0..n {
            let dest = NodeId(dest as u32);
            let dist = self.hop_distances(dest);
            for node in 0..n {
                let node = NodeId(node as u32);
                let Some(d) = dist[node.index()] else { continue };
                if node == dest {
                    continue;
                }
                let mut closer: Vec<NodeId> = self
                    .neighbors(node)
                    .iter()
                    .copied()
                    .filter(|nb| dist[nb.index()] == Some(d - 1))
                    .collect();
                closer.sort_by(|a, b| {
                    self.distance(*a, dest)
                        .total_cmp(&self.distance(*b, dest))
                        .then(a.cmp(b))
                });
                if let Some(&primary) = closer.first() {
                    self.routes.insert(
                        (node, dest),
                        RouteEntry {
                            primary,
                            alternate: closer.get(1).copied(),
                        },
                    );
                }
            }
        }
    }

    /// Reverse BFS over directed links (hop counts toward `dest`).
    fn hop_distances(&self, dest: NodeId) -> Vec<Option<u32>> {
        let n = self.nodes.len();
        let mut incoming: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        for link in self.links.keys() {
            incoming[link.to.index()].push(link.from);
        }
        let mut dist = vec![None; n];
        dist[dest.index()] = Some(0);
        let mut queue = VecDeque::from([dest]);
        while let Some(v) = queue.pop_front() {
            let d = dist[v.index()].unwrap();
            for &u in &incoming[v.index()] {
                if dist[u.index()].is_none() {
                    dist[u.index()] = Some(d + 1);
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    /// Overrides the primary next hop for `(node, dest)`.
    pub fn set_route(&mut self, node: NodeId, dest: NodeId, next: NodeId) -> Result<(), SimError> {
        self.link(LinkRef::new(node, next))?;
        let alternate = self.routes.get(&(node, dest)).and_then(|e| e.alternate);
        self.routes.insert(
            (node, dest),
            RouteEntry {
                primary: next,
                alternate,
            },
        );
        Ok(())
    }

    pub fn set_alternate(
        &mut self,
        node: NodeId,
        dest: NodeId,
        alternate: Option<NodeId>,
    ) -> Result<(), SimError> {
        if let Some(a) = alternate {
            self.link(LinkRef::new(node, a))?;
        }
        let entry = self
            .routes
            .get_mut(&(node, dest))
            .ok_or(SimError::NoRoute { from: node, dest })?;
        entry.alternate = alternate;
        Ok(())
    }

    /// Checks that following primary entries never revisits a node.
    pub fn validate_routes(&self) -> Result<(), SimError> {
        for &(node, dest) in self.routes.keys() {
            let mut seen = vec![false; self.nodes.len()];
            let mut at = node;
            while at != dest {
                if seen[at.index()] {
                    return Err(SimError::InvalidTopology(format!(
                        "routing loop from {node} toward {dest}"
                    )));
                }
                seen[at.index()] = true;
                match self.routes.get(&(at, dest)) {
                    Some(e) => at = e.primary,
                    None => {
                        return Err(SimError::InvalidTopology(format!(
                            "route from {node} toward {dest} dead-ends at {at}"
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn has_route(&self, node: NodeId, dest: NodeId) -> bool {
        self.routes.contains_key(&(node, dest))
    }

    /// Next hop considering every injected fault, regardless of activation time.
    pub fn next_hop(&self, node: NodeId, dest: NodeId) -> Result<NodeId, SimError> {
        self.next_hop_at(node, dest, f64::INFINITY)
    }

    /// Next hop considering faults active at `now`.
    pub fn next_hop_at(&self, node: NodeId, dest: NodeId, now: f64) -> Result<NodeId, SimError> {
        let no_route = SimError::NoRoute { from: node, dest };
        if node == dest || self.node_fault_at(node, now).is_some() {
            return Err(no_route);
        }
        let entry = self.routes.get(&(node, dest)).ok_or(no_route.clone())?;
        [Some(entry.primary), entry.alternate]
            .into_iter()
            .flatten()
            .find(|&hop| {
                self.node_fault_at(hop, now).is_none()
                    && !self.link_faulted_at(LinkRef::new(node, hop), now)
            })
            .ok_or(no_route)
    }

    /// Primary path ignoring faults, `src` first and `dest` last.
    pub fn static_path(&self, src: NodeId, dest: NodeId) -> Result<Vec<NodeId>, SimError> {
        let mut path = vec![src];
        let mut at = src;
        while at != dest {
            let e = self
                .routes
                .get(&(at, dest))
                .ok_or(SimError::NoRoute { from: at, dest })?;
            at = e.primary;
            path.push(at);
            if path.len() > self.nodes.len() {
                return Err(SimError::InvalidTopology("routing loop".into()));
            }
        }
        Ok(path)
    }

    /// Schedules a fault taking effect from time `at`.
    pub fn inject_fault(
        &mut self,
        target: FaultTarget,
        at: f64,
        mode: FaultMode,
        now: f64,
    ) -> Result<(), SimError> {
        match target {
            FaultTarget::Node(n) if self.node(n).is_none() => return Err(SimError::UnknownTarget),
            FaultTarget::Link(l) if !self.links.contains_key(&l) => {
                return Err(SimError::UnknownTarget)
            }
            _ => {}
        }
        if at < now || at.is_nan() {
            return Err(SimError::PastTime { time: at, now });
        }
        self.faults.push(Fault { target, at, mode });
        Ok(())
    }

    pub fn faults(&self) -> &[Fault] {
        &self.faults
    }

    pub fn node_fault_at(&self, node: NodeId, now: f64) -> Option<FaultMode> {
        let mut mode = None;
        for f in &self.faults {
            if f.target == FaultTarget::Node(node) && f.at <= now {
                // crash dominates drop-all
                if f.mode == FaultMode::Crash {
                    return Some(FaultMode::Crash);
                }
                mode = Some(f.mode);
            }
        }
        mode
    }

    pub fn link_faulted_at(&self, link: LinkRef, now: f64) -> bool {
        self.faults
            .iter()
            .any(|f| f.target == FaultTarget::Link(link) && f.at <= now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::RngStream;

    fn chain(n: usize) -> Topology {
        let mut t = Topology::new();
        let ids: Vec<_> = (0..n)
            .map(|i| t.add_node(Role::Relay, [i as f64 * 10.0, 0.0]))
            .collect();
        for w in ids.windows(2) {
            t.connect(w[0], w[1], 250_000.0, 100.0).unwrap();
        }
        t.compute_routes();
        t
    }

    #[test]
    fn delay_components_follow_formulas() {
        let mut t = Topology::new();
        let a = t.add_node(Role::Sensor, [0.0, 0.0]);
        let b = t.add_node(Role::SubSink, [30.0, 0.0]);
        t.connect(a, b, 250_000.0, 100.0).unwrap();
        let mut rng = RngStream::new(0, 0);
        let fixed = ChannelAccess::Fixed { delay: 0.001 };
        let d = t
            .sample_channel_delays(LinkRef::new(a, b), 1000.0, 0, &fixed, &mut rng)
            .unwrap();
        assert_eq!(d.t_del, 0.004);
        assert_eq!(d.p_del, 1e-7);
        assert_eq!(d.b_del, 0.0);
        assert_eq!(d.ca_del, 0.001);

        let d = t
            .sample_channel_delays(LinkRef::new(a, b), 1000.0, 10, &fixed, &mut rng)
            .unwrap();
        assert_eq!(d.b_del, 0.1);
    }

    #[test]
    fn self_link_is_unknown() {
        let t = chain(2);
        let mut rng = RngStream::new(0, 0);
        let a = NodeId(0);
        let err = t
            .sample_channel_delays(LinkRef::new(a, a), 1000.0, 0, &ChannelAccess::default(), &mut rng)
            .unwrap_err();
        assert!(matches!(err, SimError::UnknownLink { .. }));
    }

    #[test]
    fn add_self_link_rejected() {
        let mut t = chain(2);
        let p = *t.link(LinkRef::new(NodeId(0), NodeId(1))).unwrap();
        assert!(t.add_link(LinkRef::new(NodeId(0), NodeId(0)), p).is_err());
        let mut bad = p;
        bad.service_rate_pps = 0.0;
        assert!(t.add_link(LinkRef::new(NodeId(1), NodeId(0)), bad).is_err());
    }

    #[test]
    fn chain_lookup() {
        let t = chain(3);
        let (a, b, c) = (NodeId(0), NodeId(1), NodeId(2));
        assert_eq!(t.next_hop(a, c).unwrap(), b);
        assert_eq!(t.next_hop(b, c).unwrap(), c);
        assert!(matches!(t.next_hop(c, c), Err(SimError::NoRoute { .. })));
        t.validate_routes().unwrap();
        assert_eq!(t.static_path(a, c).unwrap(), vec![a, b, c]);
    }

    #[test]
    fn fault_without_alternate_severs_route() {
        let mut t = chain(3);
        let (a, b, c) = (NodeId(0), NodeId(1), NodeId(2));
        t.inject_fault(FaultTarget::Node(b), 10.0, FaultMode::Crash, 0.0)
            .unwrap();
        assert_eq!(t.next_hop_at(a, c, 9.99).unwrap(), b);
        assert!(t.next_hop_at(a, c, 10.0).is_err());
        assert!(t.next_hop(a, c).is_err());
    }

    #[test]
    fn fault_with_alternate_reroutes() {
        // diamond a -> {b, d} -> c
        let mut t = Topology::new();
        let a = t.add_node(Role::Sensor, [0.0, 0.0]);
        let b = t.add_node(Role::Sensor, [10.0, 1.0]);
        let d = t.add_node(Role::Sensor, [10.0, -2.0]);
        let c = t.add_node(Role::SubSink, [20.0, 0.0]);
        for (x, y) in [(a, b), (a, d), (b, c), (d, c)] {
            t.connect(x, y, 250_000.0, 100.0).unwrap();
        }
        t.compute_routes();
        assert_eq!(t.next_hop(a, c).unwrap(), b);
        t.inject_fault(FaultTarget::Node(b), 5.0, FaultMode::DropAll, 0.0)
            .unwrap();
        assert_eq!(t.next_hop_at(a, c, 4.0).unwrap(), b);
        assert_eq!(t.next_hop_at(a, c, 5.0).unwrap(), d);
        t.inject_fault(FaultTarget::Link(LinkRef::new(a, d)), 6.0, FaultMode::Crash, 0.0)
            .unwrap();
        assert!(t.next_hop_at(a, c, 6.0).is_err());
    }

    #[test]
    fn unknown_fault_target() {
        let mut t = chain(2);
        assert!(matches!(
            t.inject_fault(FaultTarget::Node(NodeId(99)), 1.0, FaultMode::Crash, 0.0),
            Err(SimError::UnknownTarget)
        ));
        assert!(matches!(
            t.inject_fault(
                FaultTarget::Link(LinkRef::new(NodeId(0), NodeId(0))),
                1.0,
                FaultMode::Crash,
                0.0
            ),
            Err(SimError::UnknownTarget)
        ));
        assert!(matches!(
            t.inject_fault(FaultTarget::Node(NodeId(0)), 1.0, FaultMode::Crash, 2.0),
            Err(SimError::PastTime { .. })
        ));
    }

    #[test]
    fn manual_loop_detected() {
        let mut t = chain(3);
        t.set_route(NodeId(1), NodeId(2), NodeId(0)).unwrap();
        t.set_route(NodeId(0), NodeId(2), NodeId(1)).unwrap();
        assert!(t.validate_routes().is_err());
    }
}
