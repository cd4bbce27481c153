use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Ctx;
use crate::model::{attack_payload, benign_payload, Address, FeatureConfig, Packet, PatternOracle, Step};

/// Moves the attacker to another source node from step `at` onwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relocation {
    pub at: Step,
    pub to: Address,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackerProfile {
    pub source: Address,
    pub target: Address,
    pub delta: Step,
    pub pattern: Vec<u8>,
    #[serde(default)]
    pub spoof_as: Option<Address>,
    /// Half-open `[start, end)` window with no emissions.
    #[serde(default)]
    pub pause_window: Option<(Step, Step)>,
    #[serde(default)]
    pub start: Step,
    #[serde(default)]
    pub relocate: Option<Relocation>,
    /// Pattern repetitions per payload.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

fn default_repeats() -> usize {
    8
}

impl AttackerProfile {
    pub fn new(source: Address, target: Address, delta: Step, pattern: &[u8]) -> Self {
        AttackerProfile {
            source,
            target,
            delta,
            pattern: pattern.to_vec(),
            spoof_as: None,
            pause_window: None,
            start: 0,
            relocate: None,
            repeats: default_repeats(),
        }
    }

    pub fn paused_at(&self, t: Step) -> bool {
        self.pause_window.is_some_and(|(s, e)| t >= s && t < e)
    }

    pub fn source_at(&self, t: Step) -> Address {
        match self.relocate {
            Some(r) if t >= r.at => r.to,
            _ => self.source,
        }
    }
}

/// Steps strictly before `horizon` at which the profile emits a packet.
pub fn emission_times(profile: &AttackerProfile, horizon: Step) -> Vec<Step> {
    assert!(profile.delta > 0, "attacker delta must be positive");
    (profile.start..horizon)
        .step_by(profile.delta as usize)
        .filter(|&t| !profile.paused_at(t))
        .collect()
}

/// Emits attack DATA packets every `delta` steps for as long as the run lasts.
pub async fn run_attacker(ctx: Ctx, profile: AttackerProfile, features: FeatureConfig, seed: u64) {
    assert!(profile.delta > 0, "attacker delta must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ctx.sleep_until(profile.start).await;
    loop {
        let t = ctx.now();
        if !profile.paused_at(t) {
            let from = profile.source_at(t);
            let src = profile.spoof_as.unwrap_or(from);
            let payload = attack_payload(&profile.pattern, profile.repeats, &mut rng);
            let packet = Packet::data(src, profile.target, payload, &features);
            ctx.with_world_mut(|w| w.send(from, packet)).expect("attacker route exists");
        }
        ctx.sleep(profile.delta).await;
    }
}

/// Benign traffic from a client node to the server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub source: Address,
    pub target: Address,
    pub interval: Step,
    #[serde(default)]
    pub start: Step,
}

pub async fn run_clients(ctx: Ctx, profile: ClientProfile, oracle: PatternOracle, features: FeatureConfig, seed: u64) {
    assert!(profile.interval > 0, "client interval must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ctx.sleep_until(profile.start).await;
    loop {
        let payload = benign_payload(&oracle, &mut rng);
        let packet = Packet::data(profile.source, profile.target, payload, &features);
        ctx.with_world_mut(|w| w.send(profile.source, packet)).expect("client route exists");
        ctx.sleep(profile.interval).await;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::{Link, NodeKind, NodeSpec, Sim, Topology, World};

    fn profile() -> AttackerProfile {
        AttackerProfile::new(Address(1), Address(0), 10, b"EVIL")
    }

    #[test]
    fn periodic_emission() {
        assert_eq!(emission_times(&profile(), 35), vec![0, 10, 20, 30]);
    }

    #[test]
    fn pause_window_is_half_open() {
        let p = AttackerProfile { pause_window: Some((10, 30)), ..profile() };
        assert_eq!(emission_times(&p, 35), vec![0, 30]);
    }

    fn world() -> World {
        World::new(&Topology {
            nodes: vec![
                NodeSpec { address: Address(0), kind: NodeKind::Server, ..Default::default() },
                NodeSpec { address: Address(1), kind: NodeKind::Attacker, ..Default::default() },
                NodeSpec { address: Address(2), kind: NodeKind::Client, ..Default::default() },
            ],
            links: vec![
                Link { a: Address(0), b: Address(1), latency: 1 },
                Link { a: Address(0), b: Address(2), latency: 1 },
            ],
        })
        .unwrap()
    }

    #[test]
    fn simulated_emission_matches_schedule() {
        let mut sim = Sim::new(world());
        let p = AttackerProfile { pause_window: Some((10, 30)), ..profile() };
        sim.spawn("attacker", false, run_attacker(sim.ctx(Address(1), "attacker"), p.clone(), FeatureConfig::default(), 7));
        sim.run_until(35);
        let w = sim.world();
        let w = w.borrow();
        let sends: Vec<_> = w.node(Address(0)).unwrap().traffic().iter().map(|(p, _)| p.send_time).collect();
        assert_eq!(sends, emission_times(&p, 35));
    }

    #[test]
    fn spoofed_source_on_every_packet() {
        let mut sim = Sim::new(world());
        let p = AttackerProfile { spoof_as: Some(Address(2)), ..profile() };
        sim.spawn("attacker", false, run_attacker(sim.ctx(Address(1), "attacker"), p, FeatureConfig::default(), 7));
        sim.run_until(50);
        let w = sim.world();
        let w = w.borrow();
        let traffic = w.node(Address(0)).unwrap().traffic();
        assert_eq!(traffic.len(), 5);
        assert!(traffic.iter().all(|(p, _)| p.src == Address(2) && w.origin_of(p) == Address(1)));
        let oracle = PatternOracle::new([b"EVIL".to_vec()]);
        assert!(traffic.iter().all(|(p, _)| oracle.is_attack(p)));
    }

    #[test]
    fn relocation_switches_origin() {
        let mut sim = Sim::new(world());
        let p = AttackerProfile { relocate: Some(Relocation { at: 20, to: Address(2) }), ..profile() };
        sim.spawn("attacker", false, run_attacker(sim.ctx(Address(1), "attacker"), p, FeatureConfig::default(), 7));
        sim.run_until(45);
        let w = sim.world();
        let w = w.borrow();
        let origins: Vec<_> = w.node(Address(0)).unwrap().traffic().iter().map(|(p, _)| w.origin_of(p).0).collect();
        assert_eq!(origins, vec![1, 1, 2, 2, 2]);
    }
}
