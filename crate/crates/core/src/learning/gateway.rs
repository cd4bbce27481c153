use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use super::{accuracy, exceeds_tolerance, Classifier, LearningStatus, REASON_COMMIT_FAIL, REASON_SERVER_LIED};
use crate::lifecycle::{LogEvent, Party, SharedProtocol};
use crate::mechanism::commitment::decode_rational;
use crate::mechanism::{reward_total, BidSchedule, Commitment, Money};
use crate::message::{Message, SessionId};
use crate::model::{Address, Label, LabeledPacket, Packet, Step};
use crate::netsim::Ctx;

/// Gateway deviations used by scripted scenarios.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayBehavior {
    /// Deliberately misses one test label in each of the first ζ rounds.
    pub stall_rounds: u32,
    /// Accepts the reward but never installs the filter.
    pub non_deploying: bool,
    /// Silently uninstalls the filter at this step.
    pub remove_filter_at: Option<Step>,
}

#[derive(Debug, Clone)]
pub struct GatewayLearningParams {
    pub session: SessionId,
    pub server: Address,
    pub rho_1: Money,
    pub c: BigRational,
    pub commit_eps: Commitment,
    pub timeout: Step,
    pub behavior: GatewayBehavior,
}

#[derive(Debug, Clone)]
pub struct GatewayLearningResult<M> {
    pub status: LearningStatus,
    pub rounds: u32,
    pub model: M,
    pub epsilon: Option<BigRational>,
    pub reward: Money,
}

struct Pending {
    r: u32,
    test: Vec<Packet>,
    sent: Vec<Label>,
    quote_s: Money,
    quote_g: Money,
}

/// Settled state the gateway keeps about the server and itself.
struct Books {
    own: BidSchedule,
    shadow: BidSchedule,
    audited: Vec<(Vec<Packet>, Vec<Label>)>,
    reward: Money,
}

impl Books {
    /// Folds the server-revealed labels of the pending round into both
    /// schedules. `None` if the labels do not fit the round.
    fn settle(&mut self, pend: &Pending, labels: &[Label]) -> Option<(u64, Money)> {
        let acc = accuracy(labels, &pend.sent).ok()?;
        let rho_g = self.own.settle(acc);
        let rho_s = self.shadow.settle_with_quote(&pend.quote_s, acc);
        let rho = Money::min_of(&rho_s, &rho_g);
        self.reward = reward_total(&rho, self.own.accs());
        self.audited.push((pend.test.clone(), labels.to_vec()));
        Some((acc, rho))
    }
}

fn from_peer(session: SessionId, peer: Address) -> impl Fn(&Packet) -> bool {
    move |p| p.src == peer && p.message.as_ref().and_then(Message::session) == Some(session)
}

/// Gateway side of the learning phase. Returns once payment has been
/// accepted (model ready to deploy) or the session ended otherwise.
pub async fn gateway_learning<C: Classifier>(
    ctx: &Ctx,
    proto: &SharedProtocol,
    classifier: &C,
    p: &GatewayLearningParams,
) -> GatewayLearningResult<C::Model> {
    let note = |event| proto.borrow_mut().log(p.session, Party::Gateway, ctx, event);
    let recv = from_peer(p.session, p.server);
    let mut books = Books {
        own: BidSchedule::new(p.rho_1.clone(), p.c.clone()).expect("c validated by config"),
        shadow: BidSchedule::new(p.rho_1.clone(), p.c.clone()).expect("c validated by config"),
        audited: Vec::new(),
        reward: Money::zero(),
    };
    let mut model = C::Model::default();
    let mut pending: Option<Pending> = None;
    let mut rounds = 0;

    let result = |status, model, epsilon, reward, rounds| GatewayLearningResult { status, rounds, model, epsilon, reward };
    let abort = |status: LearningStatus, reason: &str| {
        let _ = ctx.send_msg(p.server, Message::Abort { session: p.session, reason: reason.into() });
        note(LogEvent::Aborted { reason: reason.into() });
        status
    };
    let settle = |books: &mut Books, pend: Pending, labels: &[Label]| -> bool {
        match books.settle(&pend, labels) {
            Some((acc, rho)) => {
                note(LogEvent::RoundSettled {
                    r: pend.r,
                    acc,
                    quote_s: pend.quote_s,
                    quote_g: pend.quote_g,
                    rho,
                    reward_total: books.reward.clone(),
                });
                true
            }
            None => false,
        }
    };

    loop {
        let Some((packet, _)) = ctx.recv(&recv, p.timeout).await else {
            note(LogEvent::Aborted { reason: "timeout waiting for server".into() });
            return result(LearningStatus::Timeout, model, None, Money::zero(), rounds);
        };
        match packet.message {
            Some(Message::RoundStart { round, mut commit_quote, train, prev_labels, .. }) => {
                if let Some(pend) = pending.take() {
                    let labels = prev_labels.unwrap_or_default();
                    let revealed: Vec<LabeledPacket> = pend
                        .test
                        .iter()
                        .zip(&labels)
                        .map(|(packet, label)| LabeledPacket { packet: packet.clone(), label: *label })
                        .collect();
                    if !settle(&mut books, pend, &labels) {
                        let s = abort(LearningStatus::AbortCommitFail, REASON_COMMIT_FAIL);
                        return result(s, model, None, Money::zero(), rounds);
                    }
                    model = classifier.fit(&model, &revealed);
                }
                rounds = round;
                model = classifier.fit(&model, &train);
                let quote_g = books.own.round_quote();
                let msg = Message::GatewayQuote { session: p.session, round, quote: quote_g.clone() };
                if ctx.send_msg(p.server, msg).is_err() {
                    return result(LearningStatus::Timeout, model, None, Money::zero(), rounds);
                }
                let (open_quote, test) = match ctx.recv(&recv, p.timeout).await.and_then(|(pk, _)| pk.message) {
                    Some(Message::RoundTest { round: r, open_quote, test, .. }) if r == round => (open_quote, test),
                    Some(Message::Abort { reason, .. }) => {
                        note(LogEvent::Aborted { reason: format!("server: {reason}") });
                        return result(super::status_from_abort(&reason), model, None, Money::zero(), rounds);
                    }
                    _ => {
                        note(LogEvent::Aborted { reason: "timeout waiting for test set".into() });
                        return result(LearningStatus::Timeout, model, None, Money::zero(), rounds);
                    }
                };
                let quote_s = decode_rational(&open_quote.value).and_then(|q| Money::from_ratio(q).ok());
                let expected = books.shadow.round_quote();
                let quote_s = match quote_s {
                    Some(q) if commit_quote.open_with(&open_quote) && q == expected => q,
                    _ => {
                        let s = abort(LearningStatus::AbortCommitFail, REASON_COMMIT_FAIL);
                        return result(s, model, None, Money::zero(), rounds);
                    }
                };
                let mut sent = classifier.predict(&model, &test);
                if round <= p.behavior.stall_rounds {
                    if let Some(first) = sent.first_mut() {
                        *first = first.flipped();
                    }
                }
                let msg = Message::Predictions { session: p.session, round, labels: sent.clone() };
                if ctx.send_msg(p.server, msg).is_err() {
                    return result(LearningStatus::Timeout, model, None, Money::zero(), rounds);
                }
                pending = Some(Pending { r: round, test, sent, quote_s, quote_g });
            }
            Some(Message::PaymentInit { round, open_eps, final_labels, reward, .. }) => {
                let Some(pend) = pending.take().filter(|pd| pd.r == round) else {
                    let s = abort(LearningStatus::AbortCommitFail, REASON_COMMIT_FAIL);
                    return result(s, model, None, Money::zero(), rounds);
                };
                let mut commit_eps = p.commit_eps.clone();
                let epsilon = decode_rational(&open_eps.value).filter(|_| commit_eps.open_with(&open_eps));
                let Some(epsilon) = epsilon else {
                    let s = abort(LearningStatus::AbortCommitFail, REASON_COMMIT_FAIL);
                    return result(s, model, None, Money::zero(), rounds);
                };
                if !settle(&mut books, pend, &final_labels) || books.reward != reward {
                    let s = abort(LearningStatus::AbortCommitFail, REASON_COMMIT_FAIL);
                    return result(s, model, Some(epsilon), Money::zero(), rounds);
                }
                let lied = books.audited.iter().any(|(test, claimed)| {
                    let pred = classifier.predict(&model, test);
                    let mismatches = pred.iter().zip(claimed).filter(|(a, b)| a != b).count() as u64;
                    exceeds_tolerance(mismatches, test.len(), &epsilon)
                });
                if lied {
                    let s = abort(LearningStatus::AbortServerLied, REASON_SERVER_LIED);
                    return result(s, model, Some(epsilon), Money::zero(), rounds);
                }
                if ctx.send_msg(p.server, Message::PaymentAccept { session: p.session }).is_err() {
                    return result(LearningStatus::Timeout, model, Some(epsilon), Money::zero(), rounds);
                }
                return result(LearningStatus::Accepted, model, Some(epsilon), reward, rounds);
            }
            Some(Message::Abort { reason, .. }) => {
                note(LogEvent::Aborted { reason: format!("server: {reason}") });
                return result(super::status_from_abort(&reason), model, None, Money::zero(), rounds);
            }
            _ => {}
        }
    }
}
