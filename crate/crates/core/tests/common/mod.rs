#![allow(dead_code)]

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::rc::Rc;

use rand::Rng;
use remotegate::discovery::{gateway_discovery, DiscoveryResult};
use remotegate::mechanism::{reward_total, BidSchedule, Money};
use remotegate::model::{Address, AttackSet, FeatureConfig, Packet};
use remotegate::netsim::{Link, NodeKind, NodeSpec, Sim, Topology, World};
use num_rational::BigRational;

/// Random tree rooted at the server (address 0). Internal nodes become
/// gateways with some probability and then manage their whole subtree.
/// Returns the topology and a leaf to use as the attack source.
pub fn random_tree(rng: &mut impl Rng, max_nodes: u32) -> (Topology, Address) {
    let n = rng.gen_range(3..=max_nodes);
    let mut parent = vec![0u32; n as usize];
    let mut links = Vec::new();
    for v in 1..n {
        let p = rng.gen_range(0..v);
        parent[v as usize] = p;
        links.push(Link { a: Address(p), b: Address(v), latency: rng.gen_range(1..=5) });
    }
    let children: BTreeMap<u32, Vec<u32>> = (1..n).fold(BTreeMap::new(), |mut m, v| {
        m.entry(parent[v as usize]).or_default().push(v);
        m
    });
    let subtree = |root: u32| -> BTreeSet<Address> {
        let mut out = BTreeSet::new();
        let mut stack = children.get(&root).cloned().unwrap_or_default();
        while let Some(v) = stack.pop() {
            out.insert(Address(v));
            stack.extend(children.get(&v).cloned().unwrap_or_default());
        }
        out
    };
    let mut nodes = vec![NodeSpec { address: Address(0), kind: NodeKind::Server, ..Default::default() }];
    let mut leaves = Vec::new();
    for v in 1..n {
        let internal = children.contains_key(&v);
        if !internal {
            leaves.push(v);
        }
        let (kind, managed_range) = if internal && rng.gen_bool(0.5) {
            let kind = if rng.gen_bool(0.8) { NodeKind::Gateway } else { NodeKind::Router };
            (kind, Some(subtree(v)))
        } else if internal {
            (NodeKind::Router, None)
        } else {
            (NodeKind::Client, None)
        };
        nodes.push(NodeSpec { address: Address(v), kind, managed_range, advertised_range: None });
    }
    let source = Address(leaves[rng.gen_range(0..leaves.len())]);
    (Topology { nodes, links }, source)
}

/// Independent oracle: walk the unique path from the server to `source`,
/// keep the nodes whose range covers it, nearest first, each with its
/// round-trip latency.
pub fn discovery_oracle(t: &Topology, server: Address, source: Address) -> Vec<(Address, u64)> {
    let mut adj: BTreeMap<Address, Vec<(Address, u64)>> = BTreeMap::new();
    for l in &t.links {
        adj.entry(l.a).or_default().push((l.b, l.latency));
        adj.entry(l.b).or_default().push((l.a, l.latency));
    }
    let mut dist = BTreeMap::from([(server, 0u64)]);
    let mut prev: BTreeMap<Address, Address> = BTreeMap::new();
    let mut queue = VecDeque::from([server]);
    while let Some(u) = queue.pop_front() {
        for &(v, l) in adj.get(&u).into_iter().flatten() {
            if !dist.contains_key(&v) {
                dist.insert(v, dist[&u] + l);
                prev.insert(v, u);
                queue.push_back(v);
            }
        }
    }
    let mut path = vec![source];
    while let Some(&p) = prev.get(path.last().unwrap()) {
        path.push(p);
    }
    path.reverse();
    let covers = |a: Address| {
        t.nodes
            .iter()
            .find(|n| n.address == a)
            .and_then(|n| n.managed_range.as_ref())
            .is_some_and(|r| r.contains(&source))
    };
    path.into_iter().filter(|&a| covers(a)).map(|a| (a, 2 * dist[&a])).collect()
}

pub fn attack_set(src: Address, dst: Address) -> AttackSet {
    let mk = |t| {
        let mut p = Packet::data(src, dst, b"probe".to_vec(), &FeatureConfig::default());
        p.send_time = t;
        p
    };
    AttackSet::new(vec![mk(0), mk(10)]).unwrap()
}

pub fn run_discovery(t: &Topology, source: Address, ttl_max: u32) -> DiscoveryResult {
    let mut sim = Sim::new(World::new(t).unwrap());
    let ctx = sim.ctx(Address(0), "server");
    let out = Rc::new(RefCell::new(None));
    let o = Rc::clone(&out);
    let set = attack_set(source, Address(0));
    sim.spawn("server", true, async move {
        *o.borrow_mut() = Some(gateway_discovery(&ctx, &set, ttl_max).await);
    });
    sim.run(100_000);
    let r = out.borrow_mut().take().expect("discovery finished");
    r
}

/// Plays the learning-phase bid exchange with honest quotes on both sides
/// and returns the running reward after each round.
pub fn protocol_rewards(rho_1: &Money, c: &BigRational, accs: &[u64]) -> Vec<Money> {
    let mut server = BidSchedule::new(rho_1.clone(), c.clone()).unwrap();
    let mut gateway = BidSchedule::new(rho_1.clone(), c.clone()).unwrap();
    let mut out = Vec::new();
    for &acc in accs {
        let qs = server.round_quote();
        let qg = gateway.round_quote();
        let bs = server.settle_with_quote(&qs, acc);
        let bg = gateway.settle_with_quote(&qg, acc);
        let rho = Money::min_of(&bs, &bg);
        out.push(reward_total(&rho, server.accs()));
    }
    out
}
