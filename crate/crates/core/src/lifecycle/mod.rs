//! Server and gateway state machines around the learning phase:
//! negotiation, deployment verification, payments, logs and arbitration.

mod arbiter;
mod gateway;
mod ledger;
mod log;
mod server;

pub use arbiter::{resolve_conflict, Guilty, Remedy, Verdict, ViolationRecord};
pub use gateway::{run_gateway, GatewayParams, GatewaySessionSummary};
pub use ledger::{LedgerError, PaymentLedger, Purpose, Receipt};
pub use log::{BreachReason, LogEntry, LogEvent, Party, ProtocolLog};
pub use server::{run_server, ServerOutcome, ServerParams, ServerRunStatus, SessionEnd, SessionSummary};

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::mechanism::{rational_serde, Money};
use crate::message::SessionId;
use crate::model::{Address, Step};
use crate::netsim::Ctx;

/// Post-deployment service terms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceAgreement {
    pub gamma_service: Step,
    pub fee: Money,
    pub iota: u64,
    #[serde(with = "rational_serde")]
    pub epsilon: BigRational,
    pub start_step: Step,
}

impl ServiceAgreement {
    pub fn installment_len(&self) -> Step {
        self.gamma_service / self.iota.max(1)
    }

    /// `[start, end)` of installment `i` (1-based). The division remainder
    /// goes to the last installment.
    pub fn window(&self, i: u64) -> (Step, Step) {
        let len = self.installment_len();
        let start = self.start_step + (i - 1) * len;
        let end = if i >= self.iota { self.start_step + self.gamma_service } else { start + len };
        (start, end)
    }

    pub fn end(&self) -> Step {
        self.start_step + self.gamma_service
    }

    /// `Δ / ε`: the attack inter-arrival below which the filter is deemed
    /// ineffective.
    pub fn alarm_interval(&self, delta: &BigRational) -> BigRational {
        delta / &self.epsilon
    }
}

/// Mean gap between consecutive arrival steps; `None` below two arrivals.
pub fn mean_interval(arrivals: &[Step]) -> Option<BigRational> {
    let (first, last) = (arrivals.first()?, arrivals.last()?);
    if arrivals.len() < 2 {
        return None;
    }
    Some(BigRational::new(BigInt::from(last - first), BigInt::from(arrivals.len() - 1)))
}

/// Phase marks of one run, in the order they are reached.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeline {
    pub t_start: Step,
    pub t_detect: Option<Step>,
    pub t_begin: Option<Step>,
    pub t_discovery: Option<Step>,
    pub t_spoof: Option<Step>,
    pub t_init: Option<Step>,
    pub t_learned: Option<Step>,
    pub t_paid: Option<Step>,
    pub t_deployed: Option<Step>,
    pub t_end: Option<Step>,
}

impl Timeline {
    pub fn marks(&self) -> [(&'static str, Option<Step>); 10] {
        [
            ("T_start", Some(self.t_start)),
            ("T_detect", self.t_detect),
            ("T_begin", self.t_begin),
            ("T_discovery", self.t_discovery),
            ("T_spoof", self.t_spoof),
            ("T_init", self.t_init),
            ("T_learned", self.t_learned),
            ("T_paid", self.t_paid),
            ("T_deployed", self.t_deployed),
            ("T_end", self.t_end),
        ]
    }

    /// Marks that were reached never go backwards in time.
    pub fn is_ordered(&self) -> bool {
        let reached: Vec<Step> = self.marks().iter().filter_map(|(_, t)| *t).collect();
        reached.windows(2).all(|w| w[0] <= w[1])
    }

    pub fn total_time(&self) -> Option<Step> {
        Some(self.t_deployed? - self.t_detect?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionParties {
    pub server: Address,
    pub gateway: Address,
}

/// Protocol state shared by the actors: the payment ledger, both parties'
/// logs per session, arbitration verdicts and the timeline.
#[derive(Debug)]
pub struct Protocol {
    pub ledger: PaymentLedger,
    pub timeline: Timeline,
    logs: BTreeMap<(SessionId, Party), ProtocolLog>,
    sessions: BTreeMap<SessionId, SessionParties>,
    verdicts: BTreeMap<SessionId, Verdict>,
    /// Snapshots taken whenever an entry is appended, for the auditor.
    snapshots: Vec<ProtocolLog>,
    keep_snapshots: bool,
}

pub type SharedProtocol = Rc<RefCell<Protocol>>;

impl Protocol {
    pub fn new(ledger: PaymentLedger) -> Self {
        Protocol {
            ledger,
            timeline: Timeline::default(),
            logs: BTreeMap::new(),
            sessions: BTreeMap::new(),
            verdicts: BTreeMap::new(),
            snapshots: Vec::new(),
            keep_snapshots: false,
        }
    }

    pub fn shared(self) -> SharedProtocol {
        Rc::new(RefCell::new(self))
    }

    /// Keeps a copy of each log after every append so the append-only
    /// property can be checked after the run.
    pub fn keep_snapshots(&mut self, on: bool) {
        self.keep_snapshots = on;
    }

    pub fn snapshots(&self) -> &[ProtocolLog] {
        &self.snapshots
    }

    /// Registers a session. The caller picks a fresh id (a network id).
    pub fn open_session(&mut self, session: SessionId, server: Address, gateway: Address) {
        self.sessions.insert(session, SessionParties { server, gateway });
    }

    pub fn parties(&self, session: SessionId) -> Option<SessionParties> {
        self.sessions.get(&session).copied()
    }

    pub fn sessions(&self) -> impl Iterator<Item = (SessionId, SessionParties)> + '_ {
        self.sessions.iter().map(|(s, p)| (*s, *p))
    }

    /// Appends to the party's log for `session` and mirrors the entry into
    /// the run's event stream.
    pub fn log(&mut self, session: SessionId, party: Party, ctx: &Ctx, event: LogEvent) {
        let step = ctx.now();
        let log = self.logs.entry((session, party)).or_insert_with(|| ProtocolLog::new(party, session));
        let entry = log.append(step, event);
        let mut detail = serde_json::to_value(entry).expect("log entries serialize");
        if let Some(obj) = detail.as_object_mut() {
            obj.insert("session".into(), session.into());
            obj.remove("prev");
        }
        let name = detail.get("event").and_then(|e| e.as_str()).unwrap_or("log").to_string();
        ctx.record(&name, detail);
        ctx.touch();
        if self.keep_snapshots {
            self.snapshots.push(log.clone());
        }
    }

    pub fn log_of(&self, session: SessionId, party: Party) -> Option<&ProtocolLog> {
        self.logs.get(&(session, party))
    }

    pub fn logs(&self) -> impl Iterator<Item = &ProtocolLog> {
        self.logs.values()
    }

    pub fn verdict(&self, session: SessionId) -> Option<&Verdict> {
        self.verdicts.get(&session)
    }

    pub fn verdicts(&self) -> &BTreeMap<SessionId, Verdict> {
        &self.verdicts
    }

    /// Resolves a conflict once per session and executes the remedy.
    /// Later calls return the stored verdict.
    pub fn arbitrate(&mut self, session: SessionId, step: Step) -> Verdict {
        if let Some(v) = self.verdicts.get(&session) {
            return v.clone();
        }
        let empty_s = ProtocolLog::new(Party::Server, session);
        let empty_g = ProtocolLog::new(Party::Gateway, session);
        let log_s = self.logs.get(&(session, Party::Server)).unwrap_or(&empty_s);
        let log_g = self.logs.get(&(session, Party::Gateway)).unwrap_or(&empty_g);
        let mut verdict = resolve_conflict(log_s, log_g, &self.ledger);
        if let (Some(parties), Some(amount)) = (self.parties(session), verdict.amount.clone()) {
            let (payer, payee, purpose) = match verdict.remedy {
                Remedy::RefundToServer => (parties.gateway, parties.server, Purpose::Refund),
                Remedy::PayGateway => (parties.server, parties.gateway, Purpose::Arbitration),
                Remedy::NoAction => (parties.server, parties.server, Purpose::Arbitration),
            };
            if verdict.remedy != Remedy::NoAction {
                match self.ledger.pay(step, Some(session), payer, payee, amount, purpose) {
                    Ok(r) => verdict.receipt = Some(r.seq),
                    Err(e) => verdict.execution_error = Some(e.to_string()),
                }
            }
        }
        verdict.step = step;
        self.verdicts.insert(session, verdict.clone());
        verdict
    }
}
