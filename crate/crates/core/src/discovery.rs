//! Traceroute-style gateway discovery toward the apparent attack source.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::message::Message;
use crate::model::{Address, AttackSet, Packet, PacketKind};
use crate::netsim::{Ctx, Node};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayInfo {
    pub gateway: Address,
    /// Measured round trip, in steps.
    pub latency: u64,
    pub managed_range: BTreeSet<Address>,
}

/// Discovered gateways, stored nearest-first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayList {
    entries: Vec<GatewayInfo>,
}

impl GatewayList {
    /// Sorts by latency, ties by address, and keeps the minimum latency for
    /// duplicate gateways.
    pub fn from_entries(entries: impl IntoIterator<Item = GatewayInfo>) -> Self {
        let mut best: BTreeMap<Address, GatewayInfo> = BTreeMap::new();
        for e in entries {
            match best.get(&e.gateway) {
                Some(prev) if prev.latency <= e.latency => {}
                _ => {
                    best.insert(e.gateway, e);
                }
            }
        }
        let mut entries: Vec<_> = best.into_values().collect();
        entries.sort_by_key(|e| (e.latency, e.gateway));
        GatewayList { entries }
    }

    pub fn entries(&self) -> &[GatewayInfo] {
        &self.entries
    }

    /// The order in which the server engages gateways.
    pub fn farthest_first(&self) -> impl Iterator<Item = &GatewayInfo> {
        self.entries.iter().rev()
    }

    pub fn contains(&self, g: Address) -> bool {
        self.entries.iter().any(|e| e.gateway == g)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Reply of a router at which a DISCOVER probe's TTL ran out: a
/// GATEWAY-RESPONSE carrying its range when it reports one.
pub fn handle_discover(router: &Node, packet: &Packet) -> Option<Packet> {
    let Some(Message::Discover { probe }) = packet.message else {
        return None;
    };
    let range = router.reported_range()?.clone();
    Some(Message::GatewayResponse { probe, range }.into_packet(router.address, packet.src))
}

/// Plain hop-limit notice for routers without a range, so probing can
/// continue past them.
pub fn time_exceeded(router: &Node, packet: &Packet) -> Option<Packet> {
    let Some(Message::Discover { probe }) = packet.message else {
        return None;
    };
    Some(Message::TimeExceeded { probe }.into_packet(router.address, packet.src))
}

pub fn probe_timeout(ttl_max: u32, max_link_latency: u64) -> u64 {
    4 * u64::from(ttl_max) * max_link_latency
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscoveryStop {
    EchoReply { ttl: u32 },
    Timeout { ttl: u32 },
    TtlMax,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscoveryResult {
    pub source: Address,
    pub list: GatewayList,
    pub probes: u32,
    pub stop: DiscoveryStop,
    /// Gateways that answered with a range excluding the source.
    pub rejected: Vec<Address>,
}

pub async fn gateway_discovery(ctx: &Ctx, attack_set: &AttackSet, ttl_max: u32) -> DiscoveryResult {
    let source = attack_set.apparent_source();
    let timeout = probe_timeout(ttl_max, ctx.with_world(|w| w.max_link_latency()));
    let mut found = Vec::new();
    let mut rejected = Vec::new();
    let mut stop = DiscoveryStop::TtlMax;
    let mut probes = 0;
    for ttl in 1..=ttl_max {
        let probe = ctx.with_world_mut(|w| w.fresh_id());
        let packet = Message::Discover { probe }.into_packet(ctx.me(), source).with_ttl(ttl);
        let sent_at = ctx.now();
        if ctx.send(packet).is_err() {
            stop = DiscoveryStop::Timeout { ttl };
            break;
        }
        probes += 1;
        let reply = ctx
            .recv(
                |p| p.message.as_ref().and_then(Message::probe) == Some(probe) && p.kind != PacketKind::Discover,
                timeout,
            )
            .await;
        let Some((reply, at)) = reply else {
            stop = DiscoveryStop::Timeout { ttl };
            break;
        };
        match reply.message {
            Some(Message::GatewayResponse { range, .. }) => {
                if range.contains(&source) {
                    found.push(GatewayInfo { gateway: reply.src, latency: at - sent_at, managed_range: range });
                } else {
                    rejected.push(reply.src);
                }
            }
            Some(Message::EchoReply { .. }) => {
                stop = DiscoveryStop::EchoReply { ttl };
                break;
            }
            _ => {}
        }
    }
    let list = GatewayList::from_entries(found);
    ctx.record(
        "discovery",
        serde_json::json!({
            "source": source,
            "gateways": list.farthest_first().map(|g| g.gateway).collect::<Vec<_>>(),
            "probes": probes,
        }),
    );
    DiscoveryResult { source, list, probes, stop, rejected }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeatureConfig, Packet};
    use crate::netsim::{Link, NodeKind, NodeSpec, Sim, Topology, World};
    use std::cell::RefCell;
    use std::rc::Rc;

    fn node(a: u32, kind: NodeKind, range: Option<&[u32]>) -> NodeSpec {
        NodeSpec {
            address: Address(a),
            kind,
            managed_range: range.map(|r| r.iter().map(|&x| Address(x)).collect()),
            advertised_range: None,
        }
    }

    /// server 0 - R1 1 - G 2 (range {3}) - source 3
    fn chain() -> Topology {
        Topology {
            nodes: vec![
                node(0, NodeKind::Server, None),
                node(1, NodeKind::Router, None),
                node(2, NodeKind::Gateway, Some(&[3])),
                node(3, NodeKind::Attacker, None),
            ],
            links: vec![
                Link { a: Address(0), b: Address(1), latency: 2 },
                Link { a: Address(1), b: Address(2), latency: 3 },
                Link { a: Address(2), b: Address(3), latency: 1 },
            ],
        }
    }

    fn attack_set(src: u32) -> AttackSet {
        let mk = |t| {
            let mut p = Packet::data(Address(src), Address(0), b"x".to_vec(), &FeatureConfig::default());
            p.send_time = t;
            p
        };
        AttackSet::new(vec![mk(0), mk(10)]).unwrap()
    }

    fn discover(t: Topology, src: u32, ttl_max: u32) -> DiscoveryResult {
        let mut sim = Sim::new(World::new(&t).unwrap());
        let ctx = sim.ctx(Address(0), "server");
        let out = Rc::new(RefCell::new(None));
        let o = Rc::clone(&out);
        let set = attack_set(src);
        sim.spawn("server", true, async move {
            *o.borrow_mut() = Some(gateway_discovery(&ctx, &set, ttl_max).await);
        });
        sim.run(10_000);
        let r = out.borrow_mut().take().unwrap();
        r
    }

    #[test]
    fn chain_finds_gateway_behind_plain_router() {
        let r = discover(chain(), 3, 5);
        assert_eq!(r.list.entries().iter().map(|g| g.gateway).collect::<Vec<_>>(), vec![Address(2)]);
        assert_eq!(r.list.entries()[0].latency, 2 * (2 + 3));
        assert_eq!(r.stop, DiscoveryStop::EchoReply { ttl: 3 });
    }

    #[test]
    fn range_without_source_is_excluded() {
        let mut t = chain();
        t.nodes[2].advertised_range = Some([Address(9)].into());
        let r = discover(t, 3, 5);
        assert!(r.list.is_empty());
        assert_eq!(r.rejected, vec![Address(2)]);
    }

    #[test]
    fn zero_ttl_max_sends_nothing() {
        let r = discover(chain(), 3, 0);
        assert!(r.list.is_empty());
        assert_eq!(r.probes, 0);
    }

    #[test]
    fn handle_discover_echoes_range() {
        let w = World::new(&Topology {
            nodes: vec![node(0, NodeKind::Server, None), node(1, NodeKind::Router, Some(&[2])), node(2, NodeKind::Client, None)],
            links: vec![
                Link { a: Address(0), b: Address(1), latency: 1 },
                Link { a: Address(1), b: Address(2), latency: 1 },
            ],
        })
        .unwrap();
        let probe = Message::Discover { probe: 7 }.into_packet(Address(0), Address(2));
        let reply = handle_discover(w.node(Address(1)).unwrap(), &probe).unwrap();
        assert_eq!(reply.message, Some(Message::GatewayResponse { probe: 7, range: [Address(2)].into() }));
        assert_eq!(reply.dst, Address(0));
        assert!(handle_discover(w.node(Address(0)).unwrap(), &probe).is_none());
    }

    #[test]
    fn list_orders_and_dedupes() {
        let info = |g, l| GatewayInfo { gateway: Address(g), latency: l, managed_range: BTreeSet::new() };
        let list = GatewayList::from_entries([info(5, 10), info(3, 4), info(5, 6), info(1, 6)]);
        let order: Vec<_> = list.farthest_first().map(|g| (g.gateway.0, g.latency)).collect();
        assert_eq!(order, vec![(5, 6), (1, 6), (3, 4)]);
    }
}
