use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Simulation;
use crate::learning::{accuracy, meets_tolerance, LearningStatus};
use crate::lifecycle::{LogEvent, Party, Remedy};
use crate::mechanism::Money;
use crate::message::Message;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditCheck {
    pub name: String,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AuditCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn check(&mut self, name: &str, problems: Vec<String>) {
        self.checks.push(AuditCheck { name: name.into(), passed: problems.is_empty(), detail: problems.join("; ") });
    }
}

/// Post-run invariants over the ledger, the logs, the timeline and the
/// network counters.
pub fn audit(sim: &Simulation) -> AuditReport {
    let proto = sim.protocol.borrow();
    let world = sim.world.borrow();
    let ledger = &proto.ledger;
    let mut report = AuditReport::default();

    let fail_if = |bad: bool, msg: String| if bad { vec![msg] } else { vec![] };
    report.check(
        "ledger conserved",
        fail_if(!ledger.conserved(), format!("total {} != initial {}", ledger.total(), ledger.initial_total())),
    );
    report.check("receipts chained", fail_if(!ledger.verify_receipts(), "receipt chain broken".into()));
    let initial: BTreeMap<_, _> = sim.initial_balances.iter().cloned().collect();
    report.check(
        "ledger replays from initial balances",
        fail_if(!ledger.replay_matches(&initial), "replayed balances differ".into()),
    );
    let negative: Vec<String> = ledger
        .balances()
        .iter()
        .filter(|(_, m)| m.as_ratio() < Money::zero().as_ratio())
        .map(|(a, m)| format!("{a} holds {m}"))
        .collect();
    report.check("balances non-negative", negative);

    let broken: Vec<String> = proto
        .logs()
        .filter(|l| !l.verify())
        .map(|l| format!("{:?} log of session {}", l.owner, l.session))
        .collect();
    report.check("logs hash-chained", broken);

    let rewritten: Vec<String> = proto
        .snapshots()
        .iter()
        .filter(|snap| proto.log_of(snap.session, snap.owner).is_none_or(|fin| !fin.extends(snap)))
        .map(|snap| format!("{:?} log of session {} at length {}", snap.owner, snap.session, snap.entries().len()))
        .collect();
    report.check("logs append-only", rewritten);

    let mut after_breach = Vec::new();
    for log in proto.logs() {
        let Some(first) = log.first_breach() else { continue };
        for e in &log.entries()[first.seq as usize + 1..] {
            if !matches!(e.event, LogEvent::Verdict { .. } | LogEvent::FilterRemoved { .. }) {
                after_breach.push(format!("{:?} session {} logged {:?} after its breach", log.owner, log.session, e.event));
            }
        }
        let Some(parties) = proto.parties(log.session) else { continue };
        let me = match log.owner {
            Party::Server => parties.server,
            Party::Gateway => parties.gateway,
        };
        for node in world.nodes() {
            for (pk, _) in node.traffic() {
                let ours = pk.src == me && pk.message.as_ref().and_then(Message::session) == Some(log.session);
                if ours && pk.send_time > first.step {
                    after_breach.push(format!("{me} sent {:?} in session {} after its breach", pk.kind, log.session));
                }
            }
        }
    }
    report.check("breach is terminal", after_breach);

    report.check(
        "timeline ordered",
        fail_if(!proto.timeline.is_ordered(), format!("{:?}", proto.timeline)),
    );
    let stats = world.stats();
    report.check("packets conserved", fail_if(!stats.conserved(), format!("{stats:?}")));

    let unexecuted: Vec<String> = proto
        .verdicts()
        .values()
        .filter(|v| v.remedy != Remedy::NoAction && v.receipt.is_none())
        .map(|v| format!("session {}: {}", v.session, v.execution_error.clone().unwrap_or_default()))
        .collect();
    report.check("remedies executed", unexecuted);

    let mut tolerance = Vec::new();
    for s in sim.server.iter().flat_map(|o| &o.sessions) {
        let (Some(l), Some(n)) = (&s.learning, &s.negotiation) else { continue };
        if l.status != LearningStatus::Accepted {
            continue;
        }
        let ok = l.rounds.last().is_some_and(|r| {
            accuracy(&r.labels_true, &r.labels_pred)
                .is_ok_and(|acc| acc == r.acc && meets_tolerance(acc, r.labels_true.len(), &n.epsilon))
        });
        if !ok {
            tolerance.push(format!("session {} accepted below tolerance", s.session));
        }
    }
    report.check("acceptance meets tolerance", tolerance);
    report
}
