//! Deterministic discrete-event network: nodes, links, unique-path routing
//! with TTL, gateway hooks (filter slot, stamping, forwarding cache) and a
//! cooperative executor for protocol actors.

mod attacker;
mod exec;

pub use attacker::{emission_times, run_attacker, run_clients, AttackerProfile, ClientProfile, Relocation};
pub use exec::{Ctx, HoldGuard, RunStatus, Sim};

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::message::Message;
use crate::model::{Address, Packet, PacketKind, Step};
use crate::spoofcheck::Stamp;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Server,
    Gateway,
    #[default]
    Router,
    Client,
    Attacker,
}

impl NodeKind {
    pub fn may_manage_range(self) -> bool {
        matches!(self, NodeKind::Gateway | NodeKind::Router)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub a: Address,
    pub b: Address,
    pub latency: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeSpec {
    pub address: Address,
    pub kind: NodeKind,
    /// Addresses for which this node is the sole entry and exit point.
    pub managed_range: Option<BTreeSet<Address>>,
    /// Range reported in discovery responses when it differs from the
    /// managed range (a router overstating its reach).
    pub advertised_range: Option<BTreeSet<Address>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Topology {
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<Link>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("nodes[{index}]: duplicate address {address}")]
    DuplicateNode { index: usize, address: Address },
    #[error("links[{index}]: unknown endpoint {address}")]
    DanglingLink { index: usize, address: Address },
    #[error("links[{index}]: latency must be at least 1")]
    ZeroLatency { index: usize },
    #[error("links[{index}]: self loop at {address}")]
    SelfLoop { index: usize, address: Address },
    #[error("links[{index}]: duplicate link {a}-{b}")]
    DuplicateLink { index: usize, a: Address, b: Address },
    #[error("nodes[{index}]: only gateways and routers may manage a range")]
    RangeOnWrongKind { index: usize },
    #[error("nodes[{index}]: range member {member} is not a node")]
    UnknownRangeMember { index: usize, member: Address },
    #[error("nodes[{index}]: {address} is not the sole entry point for its range (link {a}-{b} bypasses it)")]
    RangeBypass { index: usize, address: Address, a: Address, b: Address },
    #[error("topology is not connected: {address} is unreachable")]
    Disconnected { address: Address },
    #[error("topology has {0} server nodes, expected exactly one")]
    ServerCount(usize),
    #[error("topology is empty")]
    Empty,
}

impl Topology {
    pub fn validate(&self) -> Result<(), TopologyError> {
        if self.nodes.is_empty() {
            return Err(TopologyError::Empty);
        }
        let mut known = BTreeSet::new();
        for (index, n) in self.nodes.iter().enumerate() {
            if !known.insert(n.address) {
                return Err(TopologyError::DuplicateNode { index, address: n.address });
            }
        }
        let mut seen = BTreeSet::new();
        for (index, l) in self.links.iter().enumerate() {
            for address in [l.a, l.b] {
                if !known.contains(&address) {
                    return Err(TopologyError::DanglingLink { index, address });
                }
            }
            if l.latency == 0 {
                return Err(TopologyError::ZeroLatency { index });
            }
            if l.a == l.b {
                return Err(TopologyError::SelfLoop { index, address: l.a });
            }
            let key = (l.a.min(l.b), l.a.max(l.b));
            if !seen.insert(key) {
                return Err(TopologyError::DuplicateLink { index, a: key.0, b: key.1 });
            }
        }
        for (index, n) in self.nodes.iter().enumerate() {
            let ranges = n.managed_range.iter().chain(n.advertised_range.iter());
            if ranges.clone().next().is_some() && !n.kind.may_manage_range() {
                return Err(TopologyError::RangeOnWrongKind { index });
            }
            let Some(range) = &n.managed_range else { continue };
            for &member in range {
                if !known.contains(&member) {
                    return Err(TopologyError::UnknownRangeMember { index, member });
                }
            }
            for l in &self.links {
                if l.a == n.address || l.b == n.address {
                    continue;
                }
                if range.contains(&l.a) != range.contains(&l.b) {
                    return Err(TopologyError::RangeBypass { index, address: n.address, a: l.a, b: l.b });
                }
            }
        }
        let adj = adjacency(self);
        let start = self.nodes[0].address;
        let reached = bfs_parents(&adj, start);
        for n in &self.nodes {
            if !reached.contains_key(&n.address) {
                return Err(TopologyError::Disconnected { address: n.address });
            }
        }
        Ok(())
    }

    pub fn servers(&self) -> Vec<Address> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Server).map(|n| n.address).collect()
    }
}

type Adjacency = BTreeMap<Address, Vec<(Address, u64)>>;

fn adjacency(t: &Topology) -> Adjacency {
    let mut adj: Adjacency = t.nodes.iter().map(|n| (n.address, Vec::new())).collect();
    for l in &t.links {
        adj.entry(l.a).or_default().push((l.b, l.latency));
        adj.entry(l.b).or_default().push((l.a, l.latency));
    }
    for v in adj.values_mut() {
        v.sort();
    }
    adj
}

fn bfs_parents(adj: &Adjacency, start: Address) -> BTreeMap<Address, Option<Address>> {
    let mut parent = BTreeMap::new();
    parent.insert(start, None);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        for &(v, _) in adj.get(&u).into_iter().flatten() {
            if let std::collections::btree_map::Entry::Vacant(e) = parent.entry(v) {
                e.insert(Some(u));
                queue.push_back(v);
            }
        }
    }
    parent
}

/// Decides whether an outbound packet toward the protected host is dropped.
pub trait PacketFilter {
    fn blocks(&self, packet: &Packet) -> bool;
    fn describe(&self) -> String;
}

pub struct FilterSlot {
    pub protect: Address,
    pub filter: Box<dyn PacketFilter>,
}

impl fmt::Debug for FilterSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FilterSlot")
            .field("protect", &self.protect)
            .field("filter", &self.filter.describe())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StampRule {
    pub stamp: Stamp,
    pub toward: Address,
    pub until: Step,
}

#[derive(Debug)]
pub struct Node {
    pub address: Address,
    pub kind: NodeKind,
    pub managed_range: Option<BTreeSet<Address>>,
    pub advertised_range: Option<BTreeSet<Address>>,
    mailbox: VecDeque<(Packet, Step)>,
    traffic: Vec<(Packet, Step)>,
    filter: Option<FilterSlot>,
    stamping: Option<StampRule>,
    forward_cache: BTreeMap<u64, Step>,
}

impl Node {
    fn new(spec: &NodeSpec) -> Self {
        Node {
            address: spec.address,
            kind: spec.kind,
            managed_range: spec.managed_range.clone(),
            advertised_range: spec.advertised_range.clone(),
            mailbox: VecDeque::new(),
            traffic: Vec::new(),
            filter: None,
            stamping: None,
            forward_cache: BTreeMap::new(),
        }
    }

    /// The range this node reports when asked by a DISCOVER probe.
    pub fn reported_range(&self) -> Option<&BTreeSet<Address>> {
        self.advertised_range.as_ref().or(self.managed_range.as_ref())
    }

    pub fn manages(&self, a: Address) -> bool {
        self.managed_range.as_ref().is_some_and(|r| r.contains(&a))
    }

    /// DATA packets delivered here, with arrival steps.
    pub fn traffic(&self) -> &[(Packet, Step)] {
        &self.traffic
    }

    pub fn mailbox_len(&self) -> usize {
        self.mailbox.len()
    }

    pub fn filter(&self) -> Option<&FilterSlot> {
        self.filter.as_ref()
    }

    pub fn stamping(&self) -> Option<&StampRule> {
        self.stamping.as_ref()
    }

    /// Step at which a packet with this fingerprint was last forwarded
    /// outbound.
    pub fn forwarded_at(&self, fingerprint: u64) -> Option<Step> {
        self.forward_cache.get(&fingerprint).copied()
    }
}

/// Content fingerprint used by gateways to recognise traffic they forwarded.
pub fn fingerprint(p: &Packet) -> u64 {
    let mut h = Sha256::new();
    h.update(p.src.0.to_be_bytes());
    h.update(p.dst.0.to_be_bytes());
    h.update(&p.payload);
    let d = h.finalize();
    u64::from_be_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error("unknown destination {0}")]
    UnknownDestination(Address),
    #[error("unknown source {0}")]
    UnknownSource(Address),
    #[error("no route from {0} to {1}")]
    NoRoute(Address, Address),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetStats {
    pub sent: u64,
    pub delivered: u64,
    pub ttl_dropped: u64,
    pub filtered: u64,
    pub in_flight: u64,
}

impl NetStats {
    /// Every sent packet is accounted for exactly once.
    pub fn conserved(&self) -> bool {
        self.sent == self.delivered + self.ttl_dropped + self.filtered + self.in_flight
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NetEvent {
    TtlExpired { step: Step, packet: u64, at: Address, kind: PacketKind },
    Filtered { step: Step, packet: u64, at: Address },
    Stamped { step: Step, packet: u64, at: Address },
}

#[derive(Debug, Clone)]
struct Hop {
    packet: Packet,
    path: Vec<Address>,
    /// Index into `path` of the node the packet arrives at.
    idx: usize,
    arrive: Step,
    seq: u64,
}

/// One actor-level record for the run's event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub step: Step,
    pub actor: String,
    pub event: String,
    pub detail: serde_json::Value,
    pub digest: String,
}

#[derive(Debug)]
pub struct World {
    now: Step,
    nodes: BTreeMap<Address, Node>,
    adj: Adjacency,
    routes: BTreeMap<(Address, Address), Vec<Address>>,
    in_flight: Vec<Hop>,
    next_id: u64,
    next_seq: u64,
    stats: NetStats,
    events: Vec<NetEvent>,
    journal: Vec<JournalEntry>,
    progress: u64,
    holds: usize,
    stamps_issued: Vec<Stamp>,
    next_fresh: u64,
}

impl World {
    pub fn new(topology: &Topology) -> Result<Self, TopologyError> {
        topology.validate()?;
        Ok(World {
            now: 0,
            nodes: topology.nodes.iter().map(|n| (n.address, Node::new(n))).collect(),
            adj: adjacency(topology),
            routes: BTreeMap::new(),
            in_flight: Vec::new(),
            next_id: 1,
            next_seq: 0,
            stats: NetStats::default(),
            events: Vec::new(),
            journal: Vec::new(),
            progress: 0,
            holds: 0,
            stamps_issued: Vec::new(),
            next_fresh: 0,
        })
    }

    pub fn now(&self) -> Step {
        self.now
    }

    pub fn node(&self, a: Address) -> Option<&Node> {
        self.nodes.get(&a)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn stats(&self) -> NetStats {
        NetStats {
            in_flight: self.in_flight.len() as u64,
            ..self.stats
        }
    }

    pub fn events(&self) -> &[NetEvent] {
        &self.events
    }

    pub fn journal(&self) -> &[JournalEntry] {
        &self.journal
    }

    pub(crate) fn progress(&self) -> u64 {
        self.progress
    }

    /// Fresh identifier for probes and sessions, unique within the run.
    pub fn fresh_id(&mut self) -> u64 {
        self.next_fresh += 1;
        self.next_fresh
    }

    pub(crate) fn touch(&mut self) {
        self.progress += 1;
    }

    pub(crate) fn holds(&self) -> usize {
        self.holds
    }

    pub(crate) fn add_hold(&mut self, delta: isize) {
        self.holds = self.holds.checked_add_signed(delta).expect("hold count underflow");
    }

    pub fn stamps_issued(&self) -> &[Stamp] {
        &self.stamps_issued
    }

    pub(crate) fn note_stamp(&mut self, s: Stamp) {
        self.stamps_issued.push(s);
    }

    pub fn max_link_latency(&self) -> u64 {
        self.adj.values().flatten().map(|&(_, l)| l).max().unwrap_or(1)
    }

    /// Appends an entry to the run's actor event stream.
    pub fn record(&mut self, actor: &str, event: &str, detail: serde_json::Value) {
        let digest = {
            let mut h = Sha256::new();
            h.update(self.now.to_be_bytes());
            h.update(actor.as_bytes());
            h.update([0]);
            h.update(event.as_bytes());
            h.update([0]);
            h.update(detail.to_string().as_bytes());
            hex::encode(&h.finalize()[..16])
        };
        self.journal.push(JournalEntry {
            step: self.now,
            actor: actor.to_string(),
            event: event.to_string(),
            detail,
            digest,
        });
    }

    /// The unique routing path (inclusive of both ends): hop-count shortest,
    /// ties broken by the lowest neighbour address at each BFS expansion.
    pub fn path(&mut self, src: Address, dst: Address) -> Result<Vec<Address>, NetError> {
        if let Some(p) = self.routes.get(&(src, dst)) {
            return Ok(p.clone());
        }
        if !self.nodes.contains_key(&src) {
            return Err(NetError::UnknownSource(src));
        }
        if !self.nodes.contains_key(&dst) {
            return Err(NetError::UnknownDestination(dst));
        }
        let parents = bfs_parents(&self.adj, src);
        let mut path = vec![dst];
        let mut cur = dst;
        while cur != src {
            cur = parents
                .get(&cur)
                .copied()
                .flatten()
                .ok_or(NetError::NoRoute(src, dst))?;
            path.push(cur);
        }
        path.reverse();
        self.routes.insert((src, dst), path.clone());
        Ok(path)
    }

    /// Sum of link latencies along the path.
    pub fn path_latency(&mut self, src: Address, dst: Address) -> Result<u64, NetError> {
        let path = self.path(src, dst)?;
        Ok(path.windows(2).map(|w| self.link_latency(w[0], w[1])).sum())
    }

    fn link_latency(&self, a: Address, b: Address) -> u64 {
        self.adj[&a]
            .iter()
            .find(|&&(n, _)| n == b)
            .map(|&(_, l)| l)
            .expect("consecutive path nodes are linked")
    }

    /// Injects a packet at `from`. The network records `from` as the
    /// packet's true origin whatever its `src` field says.
    pub fn send(&mut self, from: Address, mut packet: Packet) -> Result<u64, NetError> {
        let path = self.path(from, packet.dst)?;
        packet.set_true_origin(from);
        packet.id = self.next_id;
        self.next_id += 1;
        packet.send_time = self.now;
        let id = packet.id;
        self.stats.sent += 1;
        self.progress += 1;
        if path.len() == 1 {
            self.push_hop(packet, path, 0, self.now + 1);
        } else {
            let arrive = self.now + self.link_latency(path[0], path[1]);
            self.push_hop(packet, path, 1, arrive);
        }
        Ok(id)
    }

    fn push_hop(&mut self, packet: Packet, path: Vec<Address>, idx: usize, arrive: Step) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.in_flight.push(Hop { packet, path, idx, arrive, seq });
    }

    /// Advances the clock by one step and processes every hop arrival due
    /// at the new time. Returns the packets delivered to their destination.
    pub fn step(&mut self) -> Vec<(Address, Packet)> {
        self.now += 1;
        let now = self.now;
        let (mut due, rest): (Vec<Hop>, Vec<Hop>) =
            std::mem::take(&mut self.in_flight).into_iter().partition(|h| h.arrive <= now);
        self.in_flight = rest;
        due.sort_by_key(|h| (h.arrive, h.seq));
        let mut delivered = Vec::new();
        for hop in due {
            if let Some(d) = self.arrive(hop) {
                delivered.push(d);
            }
        }
        if !delivered.is_empty() {
            self.progress += 1;
        }
        delivered
    }

    fn arrive(&mut self, hop: Hop) -> Option<(Address, Packet)> {
        let Hop { mut packet, path, idx, .. } = hop;
        let at = path[idx];
        let now = self.now;
        if idx + 1 == path.len() {
            self.stats.delivered += 1;
            let copy = packet.clone();
            if packet.kind == PacketKind::Discover {
                if let Some(Message::Discover { probe }) = packet.message {
                    let reply = Message::EchoReply { probe }.into_packet(at, packet.src);
                    let _ = self.send(at, reply);
                }
            } else {
                let node = self.nodes.get_mut(&at).expect("path nodes exist");
                if packet.kind == PacketKind::Data {
                    node.traffic.push((packet, now));
                } else {
                    node.mailbox.push_back((packet, now));
                }
            }
            return Some((at, copy));
        }
        let prev = path[idx - 1];
        let node = self.nodes.get_mut(&at).expect("path nodes exist");
        let outbound = node.manages(prev) && !node.manages(packet.dst);
        if outbound && packet.kind == PacketKind::Data {
            if let Some(slot) = &node.filter {
                if slot.protect == packet.dst && slot.filter.blocks(&packet) {
                    self.stats.filtered += 1;
                    self.events.push(NetEvent::Filtered { step: now, packet: packet.id, at });
                    return None;
                }
            }
            node.forward_cache.insert(fingerprint(&packet), now);
            if let Some(rule) = &node.stamping {
                if rule.toward == packet.dst && now < rule.until {
                    packet.stamp = Some(rule.stamp);
                    self.events.push(NetEvent::Stamped { step: now, packet: packet.id, at });
                }
            }
        }
        packet.ttl = packet.ttl.saturating_sub(1);
        if packet.ttl == 0 {
            self.stats.ttl_dropped += 1;
            self.events.push(NetEvent::TtlExpired { step: now, packet: packet.id, at, kind: packet.kind });
            if packet.kind == PacketKind::Discover {
                let node = &self.nodes[&at];
                let reply = crate::discovery::handle_discover(node, &packet)
                    .or_else(|| crate::discovery::time_exceeded(node, &packet));
                if let Some(reply) = reply {
                    let _ = self.send(at, reply);
                }
            }
            return None;
        }
        let arrive = now + self.link_latency(at, path[idx + 1]);
        self.push_hop(packet, path, idx + 1, arrive);
        None
    }

    /// Removes and returns the first mailbox entry at `at` that matches.
    pub fn take_matching(
        &mut self,
        at: Address,
        pred: &mut dyn FnMut(&Packet) -> bool,
    ) -> Option<(Packet, Step)> {
        let node = self.nodes.get_mut(&at)?;
        let pos = node.mailbox.iter().position(|(p, _)| pred(p))?;
        self.progress += 1;
        node.mailbox.remove(pos)
    }

    pub fn install_filter(&mut self, at: Address, slot: FilterSlot) {
        if let Some(n) = self.nodes.get_mut(&at) {
            n.filter = Some(slot);
            self.progress += 1;
        }
    }

    pub fn remove_filter(&mut self, at: Address) -> bool {
        let removed = self.nodes.get_mut(&at).and_then(|n| n.filter.take()).is_some();
        if removed {
            self.progress += 1;
        }
        removed
    }

    pub fn set_stamping(&mut self, at: Address, rule: Option<StampRule>) {
        if let Some(n) = self.nodes.get_mut(&at) {
            n.stamping = rule;
            self.progress += 1;
        }
    }

    /// Ground-truth origin of a delivered packet. For auditing only.
    pub fn origin_of(&self, packet: &Packet) -> Address {
        packet.true_origin()
    }
}
