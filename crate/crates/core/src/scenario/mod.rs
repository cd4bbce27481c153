//! Scenario files, the end-to-end runner and the post-run auditor.

mod audit;
mod config;
mod report;

pub use audit::{audit, AuditCheck, AuditReport};
pub use config::{AttackerConfig, ConfigError, GatewayConfig, NodeConfig, ScenarioConfig, ServerConfig};
pub use report::{BreachRow, GatewayRow, RoundRow, RunReport};

use std::cell::RefCell;
use std::rc::Rc;

use crate::lifecycle::{
    run_gateway, run_server, GatewaySessionSummary, PaymentLedger, Protocol, ServerOutcome, SharedProtocol,
};
use crate::mechanism::Money;
use crate::model::{Address, PatternOracle};
use crate::netsim::{run_attacker, run_clients, JournalEntry, RunStatus, Sim, World};

/// Scenarios shipped with the crate, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("honest", include_str!("../../scenarios/honest.toml")),
    ("defecting-gateway", include_str!("../../scenarios/defecting-gateway.toml")),
    ("lying-server", include_str!("../../scenarios/lying-server.toml")),
    ("spoofing-attacker", include_str!("../../scenarios/spoofing-attacker.toml")),
    ("stalling-gateway", include_str!("../../scenarios/stalling-gateway.toml")),
    ("relocating-attacker", include_str!("../../scenarios/relocating-attacker.toml")),
    ("two-gateways", include_str!("../../scenarios/two-gateways.toml")),
    ("missing-fee", include_str!("../../scenarios/missing-fee.toml")),
];

pub fn bundled(name: &str) -> Option<ScenarioConfig> {
    let (_, text) = BUNDLED.iter().find(|(n, _)| *n == name)?;
    Some(ScenarioConfig::from_toml(text).expect("bundled scenarios are valid"))
}

/// Per-actor seed derived from the scenario seed.
fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A finished run with everything needed for reporting and auditing.
pub struct Simulation {
    pub config: ScenarioConfig,
    pub status: RunStatus,
    pub world: Rc<RefCell<World>>,
    pub protocol: SharedProtocol,
    pub server: Option<ServerOutcome>,
    pub gateways: Vec<(Address, Vec<GatewaySessionSummary>)>,
    pub initial_balances: Vec<(Address, Money)>,
    pub oracle: PatternOracle,
}

/// Builds the world from `config` and runs it to completion or the horizon.
pub fn simulate(config: &ScenarioConfig) -> Result<Simulation, ConfigError> {
    config.validate()?;
    let topology = config.topology();
    let world = World::new(&topology).map_err(|e| ConfigError::Invalid { path: "nodes".into(), message: e.to_string() })?;
    let mut sim = Sim::new(world);
    let server_addr = config.server_address();
    let oracle = PatternOracle::new(config.patterns.iter().map(|p| p.as_bytes().to_vec()));

    let mut initial = vec![(server_addr, config.server.balance.clone())];
    initial.extend(config.gateways.iter().map(|g| (g.address, g.balance.clone())));
    let mut protocol = Protocol::new(PaymentLedger::new(initial.clone()));
    protocol.keep_snapshots(true);
    let proto = protocol.shared();

    for (i, a) in config.attackers.iter().enumerate() {
        let ctx = sim.ctx(a.source, format!("attacker {i}"));
        let seed = sub_seed(config.seed, 100 + i as u64);
        sim.spawn(format!("attacker {i}"), false, run_attacker(ctx, a.profile(), config.features, seed));
    }
    for (i, c) in config.clients.iter().enumerate() {
        let ctx = sim.ctx(c.source, format!("client {i}"));
        let seed = sub_seed(config.seed, 200 + i as u64);
        sim.spawn(format!("client {i}"), false, run_clients(ctx, c.clone(), oracle.clone(), config.features, seed));
    }
    let gateway_cells: Vec<_> = config
        .gateways
        .iter()
        .map(|g| {
            let seed = sub_seed(config.seed, 300 + u64::from(g.address.0));
            (g.address, run_gateway(&mut sim, g.address, Rc::clone(&proto), g.params(&config.server), seed))
        })
        .collect();

    let outcome: Rc<RefCell<Option<ServerOutcome>>> = Rc::default();
    {
        let ctx = sim.ctx(server_addr, "server");
        let out = Rc::clone(&outcome);
        let fut = run_server(
            ctx,
            Rc::clone(&proto),
            config.server.params(),
            oracle.clone(),
            config.features,
            sub_seed(config.seed, 1),
        );
        sim.spawn("server", true, async move {
            let result = fut.await;
            *out.borrow_mut() = Some(result);
        });
    }

    log::info!("running scenario '{}' with seed {}", config.name, config.seed);
    let status = sim.run(config.horizon);
    log::info!("scenario '{}' stopped at step {} ({status:?})", config.name, sim.world().borrow().now());

    let server = outcome.borrow_mut().take();
    Ok(Simulation {
        config: config.clone(),
        status,
        world: sim.world(),
        protocol: proto,
        server,
        gateways: gateway_cells.into_iter().map(|(a, cell)| (a, cell.borrow().clone())).collect(),
        initial_balances: initial,
        oracle,
    })
}

impl Simulation {
    pub fn report(&self) -> RunReport {
        RunReport::from_simulation(self)
    }

    pub fn audit(&self) -> AuditReport {
        audit(self)
    }

    pub fn events(&self) -> Vec<JournalEntry> {
        self.world.borrow().journal().to_vec()
    }

    /// The event stream as line-delimited JSON records.
    pub fn events_jsonl(&self) -> String {
        let world = self.world.borrow();
        let mut out = String::new();
        for e in world.journal() {
            out.push_str(&serde_json::to_string(e).expect("journal entries serialize"));
            out.push('\n');
        }
        out
    }
}

/// Runs a scenario and returns its report.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunReport, ConfigError> {
    Ok(simulate(config)?.report())
}
