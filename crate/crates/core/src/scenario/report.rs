use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{AuditReport, Simulation};
use crate::learning::LearningStatus;
use crate::lifecycle::{
    BreachReason, GatewaySessionSummary, LogEvent, Party, Purpose, ServerRunStatus, SessionSummary, Timeline, Verdict,
};
use crate::mechanism::Money;
use crate::message::SessionId;
use crate::model::{Address, Step};
use crate::netsim::NetStats;

/// One settled learning round, as the server logged it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRow {
    pub session: SessionId,
    pub r: u32,
    pub acc: u64,
    pub quote_s: Money,
    pub quote_g: Money,
    pub rho: Money,
    pub reward_total: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreachRow {
    pub session: SessionId,
    pub party: Party,
    pub step: Step,
    pub installment: u64,
    pub reason: BreachReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayRow {
    pub gateway: Address,
    #[serde(flatten)]
    pub summary: GatewaySessionSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    /// `completed` when every essential actor finished before the horizon.
    pub run: String,
    pub final_step: Step,
    pub outcome: Option<ServerRunStatus>,
    /// Learning result of the last session that got that far.
    pub learning: Option<LearningStatus>,
    pub learning_rounds: Option<u32>,
    pub timeline: Timeline,
    pub total_time: Option<Step>,
    pub reward_paid: Money,
    pub fees_paid: Money,
    pub refunds: Money,
    pub arbitration_payments: Money,
    pub installments_agreed: u64,
    pub installments_paid: u64,
    pub filter_deployed: bool,
    /// Attack packets that reached the server inside the last agreed
    /// service window.
    pub attack_packets_in_service: Option<u64>,
    pub rounds: Vec<RoundRow>,
    pub breaches: Vec<BreachRow>,
    pub verdicts: Vec<Verdict>,
    pub sessions: Vec<SessionSummary>,
    pub gateway_sessions: Vec<GatewayRow>,
    pub spoof_checks: Vec<(Address, bool)>,
    pub discovered: Vec<Address>,
    pub balances: Vec<(Address, Money)>,
    pub net: NetStats,
    pub event_count: usize,
    pub audit: AuditReport,
}

impl RunReport {
    pub(super) fn from_simulation(sim: &Simulation) -> Self {
        let audit = sim.audit();
        let proto = sim.protocol.borrow();
        let world = sim.world.borrow();
        let server_addr = sim.config.server_address();
        let ledger = &proto.ledger;
        let sum = |pred: fn(&Purpose) -> bool| -> Money {
            ledger.receipts().iter().filter(|r| pred(&r.purpose)).map(|r| r.amount.clone()).sum()
        };

        let sessions = sim.server.as_ref().map(|o| o.sessions.clone()).unwrap_or_default();
        let last_learning = sessions.iter().rev().find_map(|s| s.learning.as_ref());
        let last_agreement = sessions.iter().rev().find_map(|s| s.agreement.as_ref());
        let attack_packets_in_service = last_agreement.map(|a| {
            let end = a.end();
            world
                .node(server_addr)
                .map(|n| {
                    n.traffic()
                        .iter()
                        .filter(|(pk, at)| *at >= a.start_step && *at < end && sim.oracle.is_attack(pk))
                        .count() as u64
                })
                .unwrap_or(0)
        });

        let mut rounds = Vec::new();
        let mut breaches = Vec::new();
        for log in proto.logs() {
            for e in log.entries() {
                match &e.event {
                    LogEvent::RoundSettled { r, acc, quote_s, quote_g, rho, reward_total } if log.owner == Party::Server => {
                        rounds.push(RoundRow {
                            session: log.session,
                            r: *r,
                            acc: *acc,
                            quote_s: quote_s.clone(),
                            quote_g: quote_g.clone(),
                            rho: rho.clone(),
                            reward_total: reward_total.clone(),
                        });
                    }
                    LogEvent::Breach { installment, reason } => breaches.push(BreachRow {
                        session: log.session,
                        party: log.owner,
                        step: e.step,
                        installment: *installment,
                        reason: *reason,
                    }),
                    _ => {}
                }
            }
        }
        breaches.sort_by_key(|b| (b.step, b.session, b.party));

        let gateway_sessions: Vec<GatewayRow> = sim
            .gateways
            .iter()
            .flat_map(|(g, list)| list.iter().map(|s| GatewayRow { gateway: *g, summary: s.clone() }))
            .collect();

        RunReport {
            scenario: sim.config.name.clone(),
            seed: sim.config.seed,
            run: match sim.status {
                crate::netsim::RunStatus::Completed { .. } => "completed".into(),
                crate::netsim::RunStatus::Horizon { .. } => "horizon".into(),
            },
            final_step: world.now(),
            outcome: sim.server.as_ref().map(|o| o.status),
            learning: last_learning.map(|l| l.status),
            learning_rounds: last_learning.map(|l| l.rounds.len() as u32),
            timeline: proto.timeline.clone(),
            total_time: proto.timeline.total_time(),
            reward_paid: sum(|p| *p == Purpose::Reward),
            fees_paid: sum(|p| matches!(p, Purpose::Fee(_))),
            refunds: sum(|p| *p == Purpose::Refund),
            arbitration_payments: sum(|p| *p == Purpose::Arbitration),
            installments_agreed: last_agreement.map_or(0, |a| a.iota),
            installments_paid: sessions.last().map_or(0, |s| s.installments_paid),
            filter_deployed: gateway_sessions.iter().any(|g| g.summary.deployed_at.is_some()),
            attack_packets_in_service,
            rounds,
            breaches,
            verdicts: proto.verdicts().values().cloned().collect(),
            sessions,
            gateway_sessions,
            spoof_checks: sim
                .server
                .as_ref()
                .map(|o| o.spoof_checks.iter().map(|c| (c.gateway, c.spoofed)).collect())
                .unwrap_or_default(),
            discovered: sim
                .server
                .as_ref()
                .and_then(|o| o.discovery.as_ref())
                .map(|d| d.list.entries().iter().map(|e| e.gateway).collect())
                .unwrap_or_default(),
            balances: ledger.balances().iter().map(|(a, m)| (*a, m.clone())).collect(),
            net: world.stats(),
            event_count: world.journal().len(),
            audit,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<Step>| v.map_or_else(|| "-".to_string(), |t| t.to_string());
        let _ = writeln!(s, "scenario   {} (seed {})", self.scenario, self.seed);
        let _ = writeln!(s, "run        {} at step {}", self.run, self.final_step);
        let _ = writeln!(
            s,
            "outcome    {}",
            self.outcome.map_or_else(|| "server did not finish".to_string(), |o| format!("{o:?}"))
        );
        if let Some(l) = self.learning {
            let _ = writeln!(s, "learning   {l:?} after {} round(s)", self.learning_rounds.unwrap_or(0));
        }
        let _ = writeln!(s, "discovered {:?}", self.discovered.iter().map(|a| a.0).collect::<Vec<_>>());
        for (g, spoofed) in &self.spoof_checks {
            let _ = writeln!(s, "spoofcheck {g}: {}", if *spoofed { "spoofed" } else { "genuine" });
        }
        let _ = writeln!(s, "\ntimeline");
        for (name, t) in self.timeline.marks() {
            let _ = writeln!(s, "  {name:<12} {}", opt(t));
        }
        let _ = writeln!(s, "  total time   {}", opt(self.total_time));
        if !self.rounds.is_empty() {
            let _ = writeln!(s, "\nrounds\n  {:>7} {:>3} {:>5} {:>10} {:>10} {:>10} {:>12}", "session", "r", "acc", "quote_s", "quote_g", "rho", "reward");
            for r in &self.rounds {
                let _ = writeln!(
                    s,
                    "  {:>7} {:>3} {:>5} {:>10} {:>10} {:>10} {:>12}",
                    r.session, r.r, r.acc, r.quote_s.to_string(), r.quote_g.to_string(), r.rho.to_string(), r.reward_total.to_string()
                );
            }
        }
        let _ = writeln!(s, "\npayments");
        let _ = writeln!(s, "  reward       {}", self.reward_paid);
        let _ = writeln!(s, "  fees         {} ({}/{} installments)", self.fees_paid, self.installments_paid, self.installments_agreed);
        let _ = writeln!(s, "  refunds      {}", self.refunds);
        let _ = writeln!(s, "  arbitration  {}", self.arbitration_payments);
        for (a, m) in &self.balances {
            let _ = writeln!(s, "  balance {a:<4} {m}");
        }
        let _ = writeln!(s, "\nservice");
        let _ = writeln!(s, "  filter deployed         {}", self.filter_deployed);
        let _ = writeln!(
            s,
            "  attack packets in window {}",
            self.attack_packets_in_service.map_or_else(|| "-".to_string(), |n| n.to_string())
        );
        if self.breaches.is_empty() {
            let _ = writeln!(s, "  breaches                none");
        }
        for b in &self.breaches {
            let _ = writeln!(s, "  breach  session {} by {:?} at {} (installment {}, {:?})", b.session, b.party, b.step, b.installment, b.reason);
        }
        for v in &self.verdicts {
            let amount = v.amount.as_ref().map_or_else(|| "-".to_string(), |m| m.to_string());
            let _ = writeln!(s, "  verdict session {}: guilty={:?} remedy={:?} amount={amount}", v.session, v.guilty, v.remedy);
        }
        let _ = writeln!(
            s,
            "\nnetwork    sent {} delivered {} filtered {} ttl-dropped {} in-flight {}",
            self.net.sent, self.net.delivered, self.net.filtered, self.net.ttl_dropped, self.net.in_flight
        );
        let _ = writeln!(s, "events     {}", self.event_count);
        let _ = writeln!(s, "\naudit      {}", if self.audit.passed() { "PASS" } else { "FAIL" });
        for c in &self.audit.checks {
            let _ = writeln!(s, "  [{}] {}{}", if c.passed { "ok" } else { "!!" }, c.name, if c.detail.is_empty() { String::new() } else { format!(": {}", c.detail) });
        }
        s
    }
}
