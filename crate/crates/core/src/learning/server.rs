use num_rational::BigRational;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{accuracy, meets_tolerance, status_from_abort, REASON_ROUND_LIMIT, LearningOutcome, LearningRound, LearningStatus};
use crate::lifecycle::{LogEvent, Party, SharedProtocol};
use crate::mechanism::{commit_value, reward_total, BidSchedule, CanonicalEncode, Money, Opening, RewardLedgerRow};
use crate::message::{Message, SessionId};
use crate::model::{Address, Label, Packet, RoundSampler, Step};
use crate::netsim::Ctx;

/// Server deviations used by scripted scenarios.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerBehavior {
    /// Understates round 1 accuracy by misreporting half the correct
    /// predictions.
    pub lie_round_one: bool,
    /// Opens the ε commitment to a different value at payment time.
    pub bad_epsilon_opening: bool,
    /// Withholds the fee from this installment onwards.
    pub stop_paying_at: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct ServerLearningParams {
    pub session: SessionId,
    pub gateway: Address,
    pub rho_1: Money,
    pub epsilon: BigRational,
    pub eps_opening: Opening,
    pub c: BigRational,
    pub r_max: u32,
    pub n_train: usize,
    pub n_test: usize,
    pub timeout: Step,
    pub behavior: ServerBehavior,
}

fn from_peer(session: SessionId, peer: Address) -> impl Fn(&Packet) -> bool {
    move |p| p.src == peer && p.message.as_ref().and_then(Message::session) == Some(session)
}

/// Labels the server reports for round `r`: the truth, or in a lying
/// round the truth with half of the gateway's correct answers flipped.
fn claimed_labels(truth: &[Label], pred: &[Label], lie: bool) -> Vec<Label> {
    let mut claimed = truth.to_vec();
    if lie {
        let mut budget = truth.len() / 2;
        for (c, p) in claimed.iter_mut().zip(pred) {
            if budget == 0 {
                break;
            }
            if c == p {
                *c = c.flipped();
                budget -= 1;
            }
        }
    }
    claimed
}

/// Server side of the learning phase. On acceptance the gateway has
/// agreed to the reward; paying it is left to the caller.
pub async fn server_learning(
    ctx: &Ctx,
    proto: &SharedProtocol,
    p: &ServerLearningParams,
    sampler: &mut RoundSampler,
    rng: &mut impl RngCore,
) -> LearningOutcome {
    let note = |event| proto.borrow_mut().log(p.session, Party::Server, ctx, event);
    let mut schedule = BidSchedule::new(p.rho_1.clone(), p.c.clone()).expect("c validated by config");
    let mut rounds: Vec<LearningRound> = Vec::new();
    let mut prev_labels: Option<Vec<Label>> = None;
    let recv = from_peer(p.session, p.gateway);

    let finish = |status, rounds: Vec<LearningRound>, reward: Money, schedule: &BidSchedule| LearningOutcome {
        status,
        rounds,
        final_reward: reward,
        finished_at: ctx.now(),
        flagged_rounds: schedule.flagged_rounds().to_vec(),
    };
    let abort = |reason: &str| {
        let _ = ctx.send_msg(p.gateway, Message::Abort { session: p.session, reason: reason.into() });
        note(LogEvent::Aborted { reason: reason.into() });
    };

    for r in 1..=p.r_max {
        let (train, test) = match sampler.next_round(r, p.n_train, p.n_test) {
            Ok(sets) => sets,
            Err(e) => {
                log::warn!("session {}: {e}", p.session);
                abort(REASON_ROUND_LIMIT);
                return finish(LearningStatus::RoundLimit, rounds, Money::zero(), &schedule);
            }
        };
        let quote_s = schedule.round_quote();
        let (commit_quote, open_quote) = commit_value(&quote_s, rng);
        let start = Message::RoundStart {
            session: p.session,
            round: r,
            commit_quote,
            train: train.examples.clone(),
            prev_labels: prev_labels.take(),
        };
        if ctx.send_msg(p.gateway, start).is_err() {
            return finish(LearningStatus::Timeout, rounds, Money::zero(), &schedule);
        }

        let quote_g = match ctx.recv(&recv, p.timeout).await.and_then(|(pk, _)| pk.message) {
            Some(Message::GatewayQuote { round, quote, .. }) if round == r => quote,
            Some(Message::Abort { reason, .. }) => {
                note(LogEvent::Aborted { reason: format!("gateway: {reason}") });
                return finish(status_from_abort(&reason), rounds, Money::zero(), &schedule);
            }
            _ => {
                abort("timeout waiting for quote");
                return finish(LearningStatus::Timeout, rounds, Money::zero(), &schedule);
            }
        };

        let test_packets = test.packets();
        let msg = Message::RoundTest { session: p.session, round: r, open_quote, test: test_packets };
        if ctx.send_msg(p.gateway, msg).is_err() {
            return finish(LearningStatus::Timeout, rounds, Money::zero(), &schedule);
        }
        let labels_pred = match ctx.recv(&recv, p.timeout).await.and_then(|(pk, _)| pk.message) {
            Some(Message::Predictions { round, labels, .. }) if round == r && labels.len() == test.len() => labels,
            Some(Message::Abort { reason, .. }) => {
                note(LogEvent::Aborted { reason: format!("gateway: {reason}") });
                return finish(status_from_abort(&reason), rounds, Money::zero(), &schedule);
            }
            _ => {
                abort("timeout waiting for predictions");
                return finish(LearningStatus::Timeout, rounds, Money::zero(), &schedule);
            }
        };

        let labels_true = test.labels();
        let claimed = claimed_labels(&labels_true, &labels_pred, p.behavior.lie_round_one && r == 1);
        let acc = accuracy(&claimed, &labels_pred).expect("lengths checked");
        let (rho_g, _) = schedule.bid_from_quote(&quote_g, acc);
        let rho_s = schedule.settle(acc);
        let rho = Money::min_of(&rho_s, &rho_g);
        let reward = reward_total(&rho, schedule.accs());
        let flagged = schedule.flagged_rounds().contains(&(r as usize));
        note(LogEvent::RoundSettled {
            r,
            acc,
            quote_s: quote_s.clone(),
            quote_g: quote_g.clone(),
            rho: rho.clone(),
            reward_total: reward.clone(),
        });
        rounds.push(LearningRound {
            r,
            train_ids: train.examples.iter().map(|e| e.packet.id).collect(),
            test_ids: test.examples.iter().map(|e| e.packet.id).collect(),
            labels_true,
            labels_pred,
            acc,
            ledger_row: RewardLedgerRow {
                r: r as usize,
                rho_s,
                rho_g,
                rho,
                acc,
                reward_total: reward.clone(),
                flagged,
            },
        });

        if !meets_tolerance(acc, test.len(), &p.epsilon) {
            prev_labels = Some(claimed);
            continue;
        }

        let open_eps = if p.behavior.bad_epsilon_opening {
            let wrong = &p.epsilon / BigRational::from_integer(2.into());
            Opening { value: wrong.canonical_bytes(), nonce: p.eps_opening.nonce }
        } else {
            p.eps_opening.clone()
        };
        note(LogEvent::PaymentInitiated { r, reward: reward.clone() });
        let init = Message::PaymentInit {
            session: p.session,
            round: r,
            open_eps,
            final_labels: claimed,
            reward: reward.clone(),
        };
        if ctx.send_msg(p.gateway, init).is_err() {
            return finish(LearningStatus::Timeout, rounds, Money::zero(), &schedule);
        }
        return match ctx.recv(&recv, p.timeout).await.and_then(|(pk, _)| pk.message) {
            Some(Message::PaymentAccept { .. }) => finish(LearningStatus::Accepted, rounds, reward, &schedule),
            Some(Message::Abort { reason, .. }) => {
                note(LogEvent::Aborted { reason: format!("gateway: {reason}") });
                finish(status_from_abort(&reason), rounds, Money::zero(), &schedule)
            }
            _ => {
                note(LogEvent::Aborted { reason: "timeout waiting for payment acceptance".into() });
                finish(LearningStatus::Timeout, rounds, Money::zero(), &schedule)
            }
        };
    }
    abort(REASON_ROUND_LIMIT);
    finish(LearningStatus::RoundLimit, rounds, Money::zero(), &schedule)
}
