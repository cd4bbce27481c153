use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use num_rational::BigRational;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::server::poll_until;
use super::{BreachReason, LogEvent, Party, Purpose, ServiceAgreement, SharedProtocol};
use crate::learning::{
    gateway_learning, GatewayBehavior, GatewayLearningParams, LearningStatus, StumpFilter, StumpLearner,
    REASON_COMMIT_FAIL,
};
use crate::mechanism::commitment::decode_rational;
use crate::mechanism::{Money, Opening};
use crate::message::{Message, SessionId};
use crate::model::{Address, PacketKind, Step};
use crate::netsim::{Ctx, FilterSlot, Sim};
use crate::spoofcheck::{gateway_spoof_check, SpoofCheckConfig};

#[derive(Debug, Clone)]
pub struct GatewayParams {
    pub base_cost: Money,
    pub per_example_cost: Money,
    /// Offered service duration; `None` mirrors the server's request.
    pub gamma: Option<Step>,
    pub fee: Money,
    pub iota: u64,
    pub c: BigRational,
    pub timeout: Step,
    /// How long a spoof-check verification stays good for an INIT.
    pub init_wait: Step,
    pub spoof: SpoofCheckConfig,
    pub behavior: GatewayBehavior,
}

impl GatewayParams {
    pub fn v_g(&self) -> Money {
        self.base_cost.clone() + self.per_example_cost.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewaySessionSummary {
    pub session: SessionId,
    pub server: Address,
    pub learning: Option<LearningStatus>,
    pub rounds: u32,
    pub deployed_at: Option<Step>,
    pub fees_received: u64,
    pub end: String,
}

type Verified = Rc<RefCell<BTreeMap<Address, Step>>>;

/// Answers PINGs for as long as the run lasts and remembers which servers
/// it verified.
async fn responder(ctx: Ctx, cfg: SpoofCheckConfig, verified: Verified, init_wait: Step, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let Some((ping, _)) = ctx.recv_until(|pk| pk.kind == PacketKind::Ping, Step::MAX).await else {
            return;
        };
        let Some(Message::Ping { attack, delta }) = ping.message else { continue };
        let _hold = ctx.hold();
        let result = gateway_spoof_check(&ctx, ping.src, &attack, &delta, &cfg, &mut rng).await;
        if !result.spoofed {
            verified.borrow_mut().insert(ping.src, ctx.now() + init_wait);
        }
    }
}

struct Gateway {
    ctx: Ctx,
    proto: SharedProtocol,
    p: GatewayParams,
}

impl Gateway {
    fn note(&self, session: SessionId, event: LogEvent) {
        self.proto.borrow_mut().log(session, Party::Gateway, &self.ctx, event);
    }

    fn from_server(session: SessionId, server: Address) -> impl Fn(&crate::model::Packet) -> bool {
        move |pk| pk.src == server && pk.message.as_ref().and_then(Message::session) == Some(session)
    }

    fn opening_is_valid(commit_vs: &crate::mechanism::Commitment, open_vs: &Opening, rho_1: &Money) -> bool {
        let mut c = commit_vs.clone();
        let Some(v_s) = decode_rational(&open_vs.value) else { return false };
        c.open_with(open_vs) && &v_s >= rho_1.as_ratio()
    }

    async fn session(&self, init: Message, server: Address) -> GatewaySessionSummary {
        let ctx = &self.ctx;
        let Message::Init { session, commit_vs, gamma_s, commit_eps, .. } = init else {
            unreachable!("caller passes INIT")
        };
        let mut summary = GatewaySessionSummary {
            session,
            server,
            learning: None,
            rounds: 0,
            deployed_at: None,
            fees_received: 0,
            end: String::new(),
        };
        self.note(session, LogEvent::SessionOpened { peer: server });
        let gamma_g = self.p.gamma.unwrap_or(gamma_s);
        let v_g = self.p.v_g();
        let terms = Message::Terms { session, gamma_g, v_g: v_g.clone(), fee: self.p.fee.clone(), iota: self.p.iota };
        let _ = ctx.send_msg(server, terms);
        self.note(session, LogEvent::Terms { gamma_s, gamma_g, v_g: v_g.clone(), fee: self.p.fee.clone(), iota: self.p.iota });

        let recv = Self::from_server(session, server);
        let rho_1 = match ctx.recv(&recv, self.p.timeout).await.and_then(|(pk, _)| pk.message) {
            Some(Message::InitialReward { rho_1, open_vs, .. }) => {
                if rho_1 != v_g || !Self::opening_is_valid(&commit_vs, &open_vs, &rho_1) {
                    let _ = ctx.send_msg(server, Message::Abort { session, reason: REASON_COMMIT_FAIL.into() });
                    self.note(session, LogEvent::Aborted { reason: "initial reward failed verification".into() });
                    summary.end = "initial reward rejected".into();
                    return summary;
                }
                rho_1
            }
            Some(Message::Abort { reason, .. }) => {
                self.note(session, LogEvent::Aborted { reason: format!("server: {reason}") });
                summary.end = format!("server aborted: {reason}");
                return summary;
            }
            _ => {
                self.note(session, LogEvent::Aborted { reason: "timeout waiting for initial reward".into() });
                summary.end = "timeout".into();
                return summary;
            }
        };
        self.note(session, LogEvent::InitialReward { rho_1: rho_1.clone(), c: self.p.c.clone() });
        let params = GatewayLearningParams {
            session,
            server,
            rho_1,
            c: self.p.c.clone(),
            commit_eps,
            timeout: self.p.timeout,
            behavior: self.p.behavior.clone(),
        };
        let learned = gateway_learning(ctx, &self.proto, &StumpLearner, &params).await;
        summary.learning = Some(learned.status);
        summary.rounds = learned.rounds;
        if learned.status != LearningStatus::Accepted {
            summary.end = "learning ended without payment".into();
            return summary;
        }
        let epsilon = learned.epsilon.expect("accepted sessions opened ε");

        let deadline = ctx.now() + self.p.timeout;
        let got = poll_until(ctx, deadline, || self.proto.borrow().ledger.find(session, Purpose::Reward).is_some()).await;
        let receipt = self.proto.borrow().ledger.find(session, Purpose::Reward).cloned();
        let Some(receipt) = receipt.filter(|_| got) else {
            self.note(session, LogEvent::Aborted { reason: "reward not received".into() });
            summary.end = "reward not received".into();
            return summary;
        };
        self.note(session, LogEvent::RewardPaid { amount: receipt.amount.clone(), receipt: receipt.seq });

        let agreement = ServiceAgreement {
            gamma_service: gamma_g,
            fee: self.p.fee.clone(),
            iota: self.p.iota,
            epsilon,
            start_step: receipt.step,
        };
        if !self.p.behavior.non_deploying {
            let filter = StumpFilter(learned.model.stump);
            let rule = crate::netsim::PacketFilter::describe(&filter);
            let me = ctx.me();
            ctx.with_world_mut(|w| w.install_filter(me, FilterSlot { protect: server, filter: Box::new(filter) }));
            self.note(session, LogEvent::FilterDeployed { rule });
            let now = ctx.now();
            self.proto.borrow_mut().timeline.t_deployed.get_or_insert(now);
            summary.deployed_at = Some(now);
        }
        summary.end = self.deployment(session, &agreement, &mut summary).await;
        summary
    }

    /// Checks each installment's fee with a grace of one installment.
    async fn deployment(&self, session: SessionId, agreement: &ServiceAgreement, summary: &mut GatewaySessionSummary) -> String {
        let ctx = &self.ctx;
        let me = ctx.me();
        let grace = agreement.installment_len();
        let defect = || {
            if self.p.behavior.remove_filter_at.is_some_and(|t| ctx.now() >= t) {
                ctx.with_world_mut(|w| w.remove_filter(me));
            }
        };
        let take_down = |reason: &str| {
            if ctx.with_world_mut(|w| w.remove_filter(me)) {
                self.note(session, LogEvent::FilterRemoved { reason: reason.into() });
            }
        };
        for i in 1..=agreement.iota {
            let (_, end) = agreement.window(i);
            let deadline = end + grace;
            let settled = poll_until(ctx, deadline, || {
                defect();
                let pr = self.proto.borrow();
                pr.verdict(session).is_some() || pr.ledger.find(session, Purpose::Fee(i)).is_some()
            })
            .await;
            if self.proto.borrow().verdict(session).is_some() {
                take_down("arbitration");
                return "terminated by arbitration".into();
            }
            if settled {
                let seq = self.proto.borrow().ledger.find(session, Purpose::Fee(i)).map(|r| r.seq).unwrap_or_default();
                self.note(session, LogEvent::FeeReceived { installment: i, receipt: seq });
                summary.fees_received += 1;
                continue;
            }
            self.note(session, LogEvent::Breach { installment: i, reason: BreachReason::FeeMissing });
            take_down("fee missing");
            let verdict = self.proto.borrow_mut().arbitrate(session, ctx.now());
            self.note(
                session,
                LogEvent::Verdict { guilty: format!("{:?}", verdict.guilty), remedy: format!("{:?}", verdict.remedy) },
            );
            return format!("breach: installment {i} fee missing");
        }
        poll_until(ctx, agreement.end(), || {
            defect();
            false
        })
        .await;
        take_down("service ended");
        self.note(session, LogEvent::ServiceCompleted);
        "service completed".into()
    }
}

/// Spawns a gateway's spoof-check responder and session loop as daemon
/// tasks. Session summaries accumulate in the returned cell.
pub fn run_gateway(
    sim: &mut Sim,
    me: Address,
    proto: SharedProtocol,
    p: GatewayParams,
    seed: u64,
) -> Rc<RefCell<Vec<GatewaySessionSummary>>> {
    let verified: Verified = Rc::default();
    let summaries: Rc<RefCell<Vec<GatewaySessionSummary>>> = Rc::default();
    let name = format!("gateway {me}");
    let rctx = sim.ctx(me, name.clone());
    sim.spawn(format!("{name} spoof responder"), false, responder(rctx, p.spoof, Rc::clone(&verified), p.init_wait, seed));

    let gw = Gateway { ctx: sim.ctx(me, name.clone()), proto, p };
    let out = Rc::clone(&summaries);
    sim.spawn(format!("{name} sessions"), false, async move {
        loop {
            let Some((pk, _)) = gw.ctx.recv_until(|pk| pk.kind == PacketKind::Init, Step::MAX).await else {
                return;
            };
            let now = gw.ctx.now();
            let trusted = verified.borrow().get(&pk.src).is_some_and(|&until| now <= until);
            if !trusted {
                gw.ctx.record("init_ignored", serde_json::json!({"server": pk.src}));
                continue;
            }
            let Some(init @ Message::Init { .. }) = pk.message else { continue };
            let _hold = gw.ctx.hold();
            let summary = gw.session(init, pk.src).await;
            out.borrow_mut().push(summary);
        }
    });
    summaries
}
