use num_rational::BigRational;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mean_interval, BreachReason, LogEvent, Party, Purpose, ServiceAgreement, SharedProtocol, Verdict};
use crate::discovery::{gateway_discovery, DiscoveryResult};
use crate::learning::{server_learning, LearningOutcome, LearningStatus, ServerBehavior, ServerLearningParams};
use crate::mechanism::{commit_value, select_initial_reward, Money, NegotiationState};
use crate::message::{Message, SessionId};
use crate::model::{benign_pool, Address, AttackSet, FeatureConfig, Label, LabeledPacket, Packet, PatternOracle, RoundSampler, Step};
use crate::netsim::Ctx;
use crate::spoofcheck::{server_spoof_check, SpoofCheckConfig, SpoofCheckResult};

#[derive(Debug, Clone)]
pub struct ServerParams {
    pub v_s: Money,
    pub gamma_s: Step,
    /// `None` picks `Δ / (2·Γ_S)`.
    pub epsilon: Option<BigRational>,
    pub gamma_min: Step,
    pub gamma_max: Step,
    pub fee_max: Money,
    pub r_max: u32,
    pub c: BigRational,
    pub n_train: usize,
    pub n_test: usize,
    pub ttl_max: u32,
    pub spoof: SpoofCheckConfig,
    pub timeout: Step,
    /// Attack packets seen before the attack counts as detected.
    pub detect_threshold: usize,
    /// Attack packets gathered into the attack set.
    pub collect: usize,
    /// Give up waiting for an attack at this step.
    pub detect_deadline: Step,
    pub benign_pool: usize,
    pub behavior: ServerBehavior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ServerRunStatus {
    ServiceComplete,
    NoAttack,
    NoGateway,
    /// Every candidate gateway was tried without a completed service.
    Exhausted,
    /// The service ended in arbitration against this server.
    Terminated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionEnd {
    Timeout,
    TermsRejected,
    NoTrade,
    LearningFailed,
    PaymentFailed,
    Breach,
    Terminated,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session: SessionId,
    pub gateway: Address,
    pub end: SessionEnd,
    pub tau: Step,
    pub negotiation: Option<NegotiationState>,
    pub learning: Option<LearningOutcome>,
    pub reward_paid: Money,
    pub fees_paid: Money,
    pub installments_paid: u64,
    pub agreement: Option<ServiceAgreement>,
    pub verdict: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerOutcome {
    pub status: ServerRunStatus,
    pub attack_set_size: usize,
    #[serde(with = "crate::mechanism::option_rational_serde", default)]
    pub delta: Option<BigRational>,
    pub discovery: Option<DiscoveryResult>,
    pub spoof_checks: Vec<SpoofCheckResult>,
    pub sessions: Vec<SessionSummary>,
}

fn default_epsilon(delta: &BigRational, gamma: Step) -> BigRational {
    let eps = delta / BigRational::from_integer((2 * gamma.max(1)).into());
    let half = BigRational::new(1.into(), 2.into());
    if eps < half { eps } else { half }
}

/// Polls `done` once per step until it holds or `deadline` passes.
pub(super) async fn poll_until(ctx: &Ctx, deadline: Step, mut done: impl FnMut() -> bool) -> bool {
    loop {
        if done() {
            return true;
        }
        if ctx.now() >= deadline {
            return false;
        }
        ctx.sleep(1).await;
    }
}

struct Server<'a> {
    ctx: &'a Ctx,
    proto: &'a SharedProtocol,
    p: &'a ServerParams,
    oracle: &'a PatternOracle,
    rng: ChaCha8Rng,
}

impl Server<'_> {
    fn note(&self, session: SessionId, event: LogEvent) {
        self.proto.borrow_mut().log(session, Party::Server, self.ctx, event);
    }

    fn mark(&self, f: impl FnOnce(&mut super::Timeline, Step)) {
        let now = self.ctx.now();
        f(&mut self.proto.borrow_mut().timeline, now);
    }

    /// Watches delivered traffic until `collect` attack packets arrived.
    async fn detect(&self) -> Vec<Packet> {
        let mut seen = 0;
        let mut attack = Vec::new();
        loop {
            for (packet, _) in self.ctx.traffic_from(seen) {
                seen += 1;
                if self.oracle.is_attack(&packet) {
                    attack.push(packet);
                    if attack.len() == self.p.detect_threshold {
                        self.mark(|t, now| t.t_detect = Some(now));
                    }
                }
            }
            if attack.len() >= self.p.collect || self.ctx.now() >= self.p.detect_deadline {
                return attack;
            }
            self.ctx.sleep(1).await;
        }
    }

    async fn start_service(
        &mut self,
        session: SessionId,
        g: Address,
        attack: &AttackSet,
        epsilon: &BigRational,
        tau: Step,
    ) -> Result<(NegotiationState, crate::mechanism::Opening), SessionEnd> {
        let ctx = self.ctx;
        let (commit_vs, open_vs) = commit_value(&self.p.v_s, &mut self.rng);
        let (commit_eps, open_eps) = commit_value(epsilon, &mut self.rng);
        let sample = attack.packets().choose(&mut self.rng).expect("non-empty attack set").clone();
        let init = Message::Init {
            session,
            commit_vs,
            gamma_s: self.p.gamma_s,
            attack: Box::new(sample),
            commit_eps,
        };
        ctx.send_msg(g, init).map_err(|_| SessionEnd::Timeout)?;
        let reply = ctx
            .recv(|pk| pk.src == g && pk.message.as_ref().and_then(Message::session) == Some(session), self.p.timeout)
            .await
            .and_then(|(pk, _)| pk.message);
        let Some(Message::Terms { gamma_g, v_g, fee, iota, .. }) = reply else {
            self.note(session, LogEvent::Aborted { reason: "no terms received".into() });
            return Err(SessionEnd::Timeout);
        };
        self.note(
            session,
            LogEvent::Terms { gamma_s: self.p.gamma_s, gamma_g, v_g: v_g.clone(), fee: fee.clone(), iota },
        );
        let problem = if gamma_g < self.p.gamma_min || gamma_g > self.p.gamma_max {
            Some(format!("service duration {gamma_g} outside [{}, {}]", self.p.gamma_min, self.p.gamma_max))
        } else if fee > self.p.fee_max {
            Some(format!("fee {fee} above {}", self.p.fee_max))
        } else if iota == 0 || iota > gamma_g / tau.max(1) {
            Some(format!("{iota} installments exceed Γ/τ = {}/{}", gamma_g, tau.max(1)))
        } else {
            None
        };
        if let Some(reason) = problem {
            let _ = ctx.send_msg(g, Message::Abort { session, reason: "terms rejected".into() });
            self.note(session, LogEvent::TermsRejected { reason });
            return Err(SessionEnd::TermsRejected);
        }
        let Ok(rho_1) = select_initial_reward(&self.p.v_s, &v_g) else {
            let _ = ctx.send_msg(g, Message::Abort { session, reason: "no trade".into() });
            self.note(session, LogEvent::Aborted { reason: "no trade: v_G above v_S".into() });
            return Err(SessionEnd::NoTrade);
        };
        ctx.send_msg(g, Message::InitialReward { session, rho_1: rho_1.clone(), open_vs })
            .map_err(|_| SessionEnd::Timeout)?;
        self.note(session, LogEvent::InitialReward { rho_1: rho_1.clone(), c: self.p.c.clone() });
        let state = NegotiationState {
            v_s: self.p.v_s.clone(),
            v_g,
            rho_1,
            gamma_service: gamma_g,
            fee,
            iota,
            epsilon: epsilon.clone(),
        };
        Ok((state, open_eps))
    }

    /// Per-installment monitoring. Returns how the service ended.
    async fn deployment(
        &self,
        session: SessionId,
        g: Address,
        agreement: &ServiceAgreement,
        attack: &AttackSet,
        summary: &mut SessionSummary,
    ) -> SessionEnd {
        let ctx = self.ctx;
        let threshold = agreement.alarm_interval(attack.delta());
        self.note(session, LogEvent::ServiceStarted { start: agreement.start_step, iota: agreement.iota });
        for i in 1..=agreement.iota {
            let (start, end) = agreement.window(i);
            let terminated = poll_until(ctx, end, || self.proto.borrow().verdict(session).is_some()).await;
            if terminated {
                return SessionEnd::Terminated;
            }
            let window: Vec<(Packet, Step)> = ctx
                .traffic_between(start, end)
                .into_iter()
                .filter(|(pk, _)| self.oracle.is_attack(pk))
                .collect();
            let arrivals: Vec<Step> = window.iter().map(|(_, at)| *at).collect();
            let mean = mean_interval(&arrivals);
            self.note(
                session,
                LogEvent::InstallmentObserved {
                    installment: i,
                    window_start: start,
                    window_end: end,
                    attack_packets: arrivals.len() as u64,
                    mean_interval: mean.clone(),
                    threshold: threshold.clone(),
                },
            );
            if mean.is_some_and(|m| m < threshold) {
                let fresh = AttackSet::new(window.iter().map(|(pk, _)| pk.clone()).collect()).unwrap_or_else(|_| attack.clone());
                let found = gateway_discovery(ctx, &fresh, self.p.ttl_max).await;
                let present = found.list.contains(g);
                self.note(session, LogEvent::Rediscovered { installment: i, gateway_present: present });
                if present {
                    let sample = fresh.packets().last().expect("non-empty").clone();
                    let check = server_spoof_check(ctx, g, &sample, fresh.delta(), self.oracle, &self.p.spoof).await;
                    self.note(session, LogEvent::Respoofchecked { installment: i, spoofed: check.spoofed });
                    if !check.spoofed {
                        self.note(session, LogEvent::Breach { installment: i, reason: BreachReason::FilterIneffective });
                        let verdict = self.proto.borrow_mut().arbitrate(session, ctx.now());
                        self.note(
                            session,
                            LogEvent::Verdict {
                                guilty: format!("{:?}", verdict.guilty),
                                remedy: format!("{:?}", verdict.remedy),
                            },
                        );
                        summary.verdict = Some(verdict);
                        return SessionEnd::Breach;
                    }
                }
            }
            if self.p.behavior.stop_paying_at.is_some_and(|s| i >= s) {
                continue;
            }
            let paid = self.proto.borrow_mut().ledger.pay(
                ctx.now(),
                Some(session),
                ctx.me(),
                g,
                agreement.fee.clone(),
                Purpose::Fee(i),
            );
            match paid {
                Ok(receipt) => {
                    self.note(session, LogEvent::FeePaid { installment: i, receipt: receipt.seq });
                    summary.fees_paid += &agreement.fee;
                    summary.installments_paid += 1;
                }
                Err(e) => self.note(session, LogEvent::PaymentFailed { installment: i, reason: e.to_string() }),
            }
        }
        if self.proto.borrow().verdict(session).is_some() {
            return SessionEnd::Terminated;
        }
        self.note(session, LogEvent::ServiceCompleted);
        SessionEnd::Completed
    }

    async fn session(&mut self, g: Address, tau: Step, attack: &AttackSet, pools: &Pools) -> SessionSummary {
        let ctx = self.ctx;
        let session = ctx.with_world_mut(|w| w.fresh_id());
        self.proto.borrow_mut().open_session(session, ctx.me(), g);
        self.mark(|t, now| t.t_init = Some(now));
        self.note(session, LogEvent::SessionOpened { peer: g });
        let mut summary = SessionSummary {
            session,
            gateway: g,
            end: SessionEnd::Timeout,
            tau,
            negotiation: None,
            learning: None,
            reward_paid: Money::zero(),
            fees_paid: Money::zero(),
            installments_paid: 0,
            agreement: None,
            verdict: None,
        };
        let epsilon = self.p.epsilon.clone().unwrap_or_else(|| default_epsilon(attack.delta(), self.p.gamma_s));
        let (state, eps_opening) = match self.start_service(session, g, attack, &epsilon, tau).await {
            Ok(ok) => ok,
            Err(end) => {
                summary.end = end;
                return summary;
            }
        };
        let params = ServerLearningParams {
            session,
            gateway: g,
            rho_1: state.rho_1.clone(),
            epsilon: epsilon.clone(),
            eps_opening,
            c: self.p.c.clone(),
            r_max: self.p.r_max,
            n_train: self.p.n_train,
            n_test: self.p.n_test,
            timeout: self.p.timeout,
            behavior: self.p.behavior.clone(),
        };
        let mut sampler = RoundSampler::new(pools.attack.clone(), pools.good.clone(), session);
        let outcome = server_learning(ctx, self.proto, &params, &mut sampler, &mut self.rng).await;
        let accepted = outcome.status == LearningStatus::Accepted;
        let reward = outcome.final_reward.clone();
        summary.negotiation = Some(state.clone());
        summary.learning = Some(outcome);
        if !accepted {
            summary.end = SessionEnd::LearningFailed;
            return summary;
        }
        self.mark(|t, now| t.t_learned = Some(now));
        let paid = self
            .proto
            .borrow_mut()
            .ledger
            .pay(ctx.now(), Some(session), ctx.me(), g, reward.clone(), Purpose::Reward);
        let receipt = match paid {
            Ok(r) => r,
            Err(e) => {
                self.note(session, LogEvent::PaymentFailed { installment: 0, reason: e.to_string() });
                summary.end = SessionEnd::PaymentFailed;
                return summary;
            }
        };
        self.note(session, LogEvent::RewardPaid { amount: reward.clone(), receipt: receipt.seq });
        self.mark(|t, now| t.t_paid = Some(now));
        summary.reward_paid = reward;
        let agreement = ServiceAgreement {
            gamma_service: state.gamma_service,
            fee: state.fee.clone(),
            iota: state.iota,
            epsilon,
            start_step: receipt.step,
        };
        summary.agreement = Some(agreement.clone());
        summary.end = self.deployment(session, g, &agreement, attack, &mut summary).await;
        if summary.verdict.is_none() {
            summary.verdict = self.proto.borrow().verdict(session).cloned();
        }
        self.mark(|t, now| t.t_end = Some(now));
        summary
    }
}

struct Pools {
    attack: Vec<LabeledPacket>,
    good: Vec<LabeledPacket>,
}

/// The server's whole run: detect, discover, spoof-check, then engage the
/// remaining gateways farthest first until one completes its service.
pub async fn run_server(
    ctx: Ctx,
    proto: SharedProtocol,
    p: ServerParams,
    oracle: PatternOracle,
    features: FeatureConfig,
    seed: u64,
) -> ServerOutcome {
    let mut server = Server { ctx: &ctx, proto: &proto, p: &p, oracle: &oracle, rng: ChaCha8Rng::seed_from_u64(seed) };
    let mut outcome = ServerOutcome {
        status: ServerRunStatus::NoAttack,
        attack_set_size: 0,
        delta: None,
        discovery: None,
        spoof_checks: Vec::new(),
        sessions: Vec::new(),
    };
    proto.borrow_mut().timeline.t_start = ctx.now();

    let collected = server.detect().await;
    if collected.len() < p.detect_threshold.max(2) {
        return outcome;
    }
    let Ok(attack) = AttackSet::new(collected) else {
        return outcome;
    };
    server.mark(|t, now| t.t_begin = Some(now));
    outcome.attack_set_size = attack.len();
    outcome.delta = Some(attack.delta().clone());

    let found = gateway_discovery(&ctx, &attack, p.ttl_max).await;
    server.mark(|t, now| t.t_discovery = Some(now));

    let mut candidates = Vec::new();
    for info in found.list.entries() {
        let sample = attack.packets().choose(&mut server.rng).expect("non-empty").clone();
        let check = server_spoof_check(&ctx, info.gateway, &sample, attack.delta(), &oracle, &p.spoof).await;
        if !check.spoofed {
            candidates.push((info.gateway, check.duration()));
        }
        outcome.spoof_checks.push(check);
    }
    server.mark(|t, now| t.t_spoof = Some(now));
    let order: Vec<(Address, Step)> = found
        .list
        .farthest_first()
        .filter_map(|info| candidates.iter().find(|(g, _)| *g == info.gateway).copied())
        .collect();
    outcome.discovery = Some(found);
    if order.is_empty() {
        outcome.status = ServerRunStatus::NoGateway;
        return outcome;
    }

    let pools = Pools {
        attack: attack
            .packets()
            .iter()
            .map(|pk| LabeledPacket { packet: pk.clone(), label: Label::Attack })
            .collect(),
        good: benign_pool(&oracle, p.benign_pool, ctx.me(), ctx.me(), &features, seed ^ 0x5eed),
    };
    outcome.status = ServerRunStatus::Exhausted;
    for (g, tau) in order {
        let summary = server.session(g, tau, &attack, &pools).await;
        let end = summary.end;
        outcome.sessions.push(summary);
        match end {
            SessionEnd::Completed => {
                outcome.status = ServerRunStatus::ServiceComplete;
                break;
            }
            SessionEnd::Terminated => {
                outcome.status = ServerRunStatus::Terminated;
                break;
            }
            _ => {}
        }
    }
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_epsilon_is_below_delta_over_gamma() {
        let delta = BigRational::from_integer(10.into());
        let eps = default_epsilon(&delta, 2000);
        assert_eq!(eps, BigRational::new(1.into(), 400.into()));
        assert!(eps < &delta / BigRational::from_integer(2000.into()));
        assert_eq!(default_epsilon(&delta, 1), BigRational::new(1.into(), 2.into()));
    }
}
