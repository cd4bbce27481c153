use serde::{Deserialize, Serialize};

use super::ledger::{PaymentLedger, Purpose};
use super::log::{BreachReason, LogEvent, Party, ProtocolLog};
use crate::mechanism::{reward_total, BidSchedule, Money};
use crate::message::SessionId;
use crate::model::Step;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Guilty {
    Server,
    Gateway,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Remedy {
    RefundToServer,
    PayGateway,
    NoAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationRecord {
    pub step: Step,
    pub party: Party,
    pub rule: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub session: SessionId,
    pub guilty: Guilty,
    pub remedy: Remedy,
    pub amount: Option<Money>,
    pub violations: Vec<ViolationRecord>,
    /// Set when a breach was logged but no party violated the protocol.
    pub flagged: bool,
    pub step: Step,
    pub receipt: Option<u64>,
    pub execution_error: Option<String>,
}

struct Replay<'a> {
    violations: Vec<ViolationRecord>,
    log_s: &'a ProtocolLog,
    log_g: &'a ProtocolLog,
    ledger: &'a PaymentLedger,
}

impl Replay<'_> {
    fn flag(&mut self, step: Step, party: Party, rule: impl Into<String>) {
        self.violations.push(ViolationRecord { step, party, rule: rule.into() });
    }

    fn fee(&self) -> Option<Money> {
        replay_fee(self.log_s, self.log_g)
    }

    /// Recomputes the owner's quotes, agreed bids and running reward.
    fn check_rounds(&mut self, log: &ProtocolLog) {
        let party = log.owner;
        let mut schedules: Option<(BidSchedule, BidSchedule)> = None;
        let mut last_reward = None;
        for e in log.entries() {
            match &e.event {
                LogEvent::InitialReward { rho_1, c } => {
                    schedules = BidSchedule::new(rho_1.clone(), c.clone())
                        .ok()
                        .map(|s| (s.clone(), s));
                }
                LogEvent::RoundSettled { r, acc, quote_s, quote_g, rho, reward_total: reward } => {
                    let Some((own, peer)) = schedules.as_mut() else {
                        self.flag(e.step, party, format!("round {r} settled before the initial reward"));
                        continue;
                    };
                    let (own_q, peer_q) = match party {
                        Party::Server => (quote_s, quote_g),
                        Party::Gateway => (quote_g, quote_s),
                    };
                    if *own_q != own.round_quote() {
                        self.flag(e.step, party, format!("round {r} quote off the bid recurrence"));
                    }
                    let own_bid = own.settle_with_quote(own_q, *acc);
                    let peer_bid = peer.settle_with_quote(peer_q, *acc);
                    let expected = Money::min_of(&own_bid, &peer_bid);
                    if *rho != expected || *reward != reward_total(&expected, own.accs()) {
                        self.flag(e.step, party, format!("round {r} reward miscomputed"));
                    }
                    last_reward = Some(reward.clone());
                }
                LogEvent::PaymentInitiated { reward, .. } if last_reward.as_ref() != Some(reward) => {
                    self.flag(e.step, party, "payment initiated for a reward other than the settled one");
                }
                _ => {}
            }
        }
    }

    fn check_fee_records(&mut self) {
        let fee = self.fee();
        for e in self.log_s.entries() {
            if let LogEvent::FeePaid { installment, receipt } = e.event {
                let ok = self.ledger.receipts().get(receipt as usize).is_some_and(|r| {
                    r.session == Some(self.log_s.session)
                        && r.purpose == Purpose::Fee(installment)
                        && Some(&r.amount) == fee.as_ref()
                });
                if !ok {
                    self.flag(e.step, Party::Server, format!("installment {installment} fee record has no matching receipt"));
                }
            }
        }
    }

    fn window_of(&self, installment: u64) -> Option<(Step, Step)> {
        self.log_s.entries().iter().find_map(|e| match e.event {
            LogEvent::InstallmentObserved { installment: i, window_start, window_end, .. } if i == installment => {
                Some((window_start, window_end))
            }
            _ => None,
        })
    }

    /// A server breach is backed when, before it, the same installment
    /// logged an alarm rate, the gateway still on the path and a spoof
    /// check saying the attack really passes the gateway.
    fn server_breach_supported(&self, installment: u64, at: Step) -> bool {
        let before = || self.log_s.entries().iter().filter(move |e| e.step <= at);
        let alarm = before().any(|e| match &e.event {
            LogEvent::InstallmentObserved { installment: i, mean_interval: Some(m), threshold, .. } => {
                *i == installment && m < threshold
            }
            _ => false,
        });
        let present = before().any(|e| {
            matches!(e.event, LogEvent::Rediscovered { installment: i, gateway_present: true } if i == installment)
        });
        let genuine = before().any(|e| {
            matches!(e.event, LogEvent::Respoofchecked { installment: i, spoofed: false } if i == installment)
        });
        alarm && present && genuine
    }

    fn fee_paid_by(&self, installment: u64, at: Step) -> bool {
        self.ledger
            .find(self.log_s.session, Purpose::Fee(installment))
            .is_some_and(|r| r.step <= at)
    }

    fn check_breaches(&mut self) {
        let server_breaches: Vec<(Step, u64)> = self
            .log_s
            .entries()
            .iter()
            .filter_map(|e| match e.event {
                LogEvent::Breach { installment, reason: BreachReason::FilterIneffective } => Some((e.step, installment)),
                _ => None,
            })
            .collect();
        let gateway_breaches: Vec<(Step, u64)> = self
            .log_g
            .entries()
            .iter()
            .filter_map(|e| match e.event {
                LogEvent::Breach { installment, reason: BreachReason::FeeMissing } => Some((e.step, installment)),
                _ => None,
            })
            .collect();
        let gateway_released_by = |this: &Self, at: Step| {
            gateway_breaches.iter().any(|&(t, i)| t < at && !this.fee_paid_by(i, t))
        };
        let server_released_by = |this: &Self, at: Step| {
            server_breaches.iter().any(|&(t, i)| t <= at && this.server_breach_supported(i, t))
        };

        for &(t, i) in &server_breaches {
            if !self.server_breach_supported(i, t) {
                self.flag(t, Party::Server, format!("installment {i} breach without supporting evidence"));
                continue;
            }
            let (start, end) = self.window_of(i).unwrap_or((t, t));
            if !gateway_released_by(self, end) {
                self.flag(start, Party::Gateway, format!("installment {i}: filter ineffective while the attack verifiably passes the gateway"));
            }
        }
        for &(t, i) in &gateway_breaches {
            if self.fee_paid_by(i, t) {
                self.flag(t, Party::Gateway, format!("installment {i} fee breach despite a receipt"));
            } else if !server_released_by(self, t) {
                self.flag(t, Party::Server, format!("installment {i} fee not paid"));
            }
        }
    }
}

/// Replays both logs against the ledger. The earliest recorded violation
/// decides guilt; ties go to the server.
pub fn resolve_conflict(log_s: &ProtocolLog, log_g: &ProtocolLog, ledger: &PaymentLedger) -> Verdict {
    let session = log_s.session;
    let mut replay = Replay { violations: Vec::new(), log_s, log_g, ledger };
    replay.check_rounds(log_s);
    replay.check_rounds(log_g);
    replay.check_fee_records();
    replay.check_breaches();
    let mut violations = replay.violations;
    violations.sort_by_key(|v| (v.step, v.party));

    let paid_to_gateway = || -> Money {
        ledger
            .session_receipts(session)
            .filter(|r| matches!(r.purpose, Purpose::Reward | Purpose::Fee(_)))
            .map(|r| r.amount.clone())
            .sum()
    };
    let owed_fees = || -> Money {
        let fee = replay_fee(log_s, log_g).unwrap_or_else(Money::zero);
        let last = log_g
            .entries()
            .iter()
            .filter_map(|e| match e.event {
                LogEvent::Breach { installment, reason: BreachReason::FeeMissing } => Some(installment),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        let unpaid = (1..=last).filter(|&i| ledger.find(session, Purpose::Fee(i)).is_none()).count();
        fee.times(unpaid as u64)
    };

    let (guilty, remedy, amount) = match violations.first().map(|v| v.party) {
        Some(Party::Gateway) => (Guilty::Gateway, Remedy::RefundToServer, Some(paid_to_gateway())),
        Some(Party::Server) => (Guilty::Server, Remedy::PayGateway, Some(owed_fees())),
        None => (Guilty::None, Remedy::NoAction, None),
    };
    Verdict {
        session,
        guilty,
        remedy,
        amount,
        flagged: guilty == Guilty::None,
        violations,
        step: 0,
        receipt: None,
        execution_error: None,
    }
}

fn replay_fee(log_s: &ProtocolLog, log_g: &ProtocolLog) -> Option<Money> {
    [log_s, log_g].iter().flat_map(|l| l.entries()).find_map(|e| match &e.event {
        LogEvent::Terms { fee, .. } => Some(fee.clone()),
        _ => None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Address;
    use num_rational::BigRational;

    fn ratio(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    const S: Address = Address(0);
    const G: Address = Address(2);

    fn terms() -> LogEvent {
        LogEvent::Terms { gamma_s: 100, gamma_g: 100, v_g: Money::from_integer(2), fee: Money::from_integer(5), iota: 2 }
    }

    fn honest_prefix(log: &mut ProtocolLog) {
        log.append(1, terms());
        log.append(2, LogEvent::InitialReward { rho_1: Money::from_integer(2), c: ratio(2, 1) });
        let q = Money::from_integer(2);
        log.append(
            5,
            LogEvent::RoundSettled {
                r: 1,
                acc: 8,
                quote_s: q.clone(),
                quote_g: q.clone(),
                rho: q,
                reward_total: Money::from_integer(16),
            },
        );
    }

    fn ledger() -> PaymentLedger {
        PaymentLedger::new([(S, Money::from_integer(100)), (G, Money::zero())])
    }

    fn observed(log: &mut ProtocolLog, step: Step, installment: u64, rate_alarm: bool) {
        let (ws, we) = (10 + (installment - 1) * 50, 10 + installment * 50);
        log.append(
            step,
            LogEvent::InstallmentObserved {
                installment,
                window_start: ws,
                window_end: we,
                attack_packets: if rate_alarm { 5 } else { 0 },
                mean_interval: rate_alarm.then(|| ratio(10, 1)),
                threshold: ratio(200, 1),
            },
        );
    }

    #[test]
    fn ineffective_filter_blames_gateway() {
        let mut ls = ProtocolLog::new(Party::Server, 7);
        let mut lg = ProtocolLog::new(Party::Gateway, 7);
        honest_prefix(&mut ls);
        honest_prefix(&mut lg);
        let mut l = ledger();
        l.pay(8, Some(7), S, G, Money::from_integer(16), Purpose::Reward).unwrap();
        observed(&mut ls, 60, 1, true);
        ls.append(65, LogEvent::Rediscovered { installment: 1, gateway_present: true });
        ls.append(90, LogEvent::Respoofchecked { installment: 1, spoofed: false });
        ls.append(90, LogEvent::Breach { installment: 1, reason: BreachReason::FilterIneffective });
        let v = resolve_conflict(&ls, &lg, &l);
        assert_eq!((v.guilty, v.remedy), (Guilty::Gateway, Remedy::RefundToServer));
        assert_eq!(v.amount, Some(Money::from_integer(16)));
    }

    #[test]
    fn missing_fee_blames_server() {
        let mut ls = ProtocolLog::new(Party::Server, 7);
        let mut lg = ProtocolLog::new(Party::Gateway, 7);
        honest_prefix(&mut ls);
        honest_prefix(&mut lg);
        let mut l = ledger();
        l.pay(8, Some(7), S, G, Money::from_integer(16), Purpose::Reward).unwrap();
        let r = l.pay(60, Some(7), S, G, Money::from_integer(5), Purpose::Fee(1)).unwrap();
        observed(&mut ls, 60, 1, false);
        ls.append(60, LogEvent::FeePaid { installment: 1, receipt: r.seq });
        lg.append(60, LogEvent::FeeReceived { installment: 1, receipt: r.seq });
        lg.append(160, LogEvent::Breach { installment: 2, reason: BreachReason::FeeMissing });
        let v = resolve_conflict(&ls, &lg, &l);
        assert_eq!((v.guilty, v.remedy), (Guilty::Server, Remedy::PayGateway));
        assert_eq!(v.amount, Some(Money::from_integer(5)));
    }

    #[test]
    fn unsupported_breach_blames_server() {
        let mut ls = ProtocolLog::new(Party::Server, 7);
        let lg = ProtocolLog::new(Party::Gateway, 7);
        honest_prefix(&mut ls);
        observed(&mut ls, 60, 1, false);
        ls.append(61, LogEvent::Breach { installment: 1, reason: BreachReason::FilterIneffective });
        let v = resolve_conflict(&ls, &lg, &ledger());
        assert_eq!(v.guilty, Guilty::Server);
    }

    #[test]
    fn false_fee_alarm_blames_gateway() {
        let ls = ProtocolLog::new(Party::Server, 7);
        let mut lg = ProtocolLog::new(Party::Gateway, 7);
        lg.append(1, terms());
        let mut l = ledger();
        l.pay(50, Some(7), S, G, Money::from_integer(5), Purpose::Fee(1)).unwrap();
        lg.append(60, LogEvent::Breach { installment: 1, reason: BreachReason::FeeMissing });
        let v = resolve_conflict(&ls, &lg, &l);
        assert_eq!(v.guilty, Guilty::Gateway);
    }

    #[test]
    fn clean_logs_give_no_action() {
        let mut ls = ProtocolLog::new(Party::Server, 7);
        let mut lg = ProtocolLog::new(Party::Gateway, 7);
        honest_prefix(&mut ls);
        honest_prefix(&mut lg);
        let v = resolve_conflict(&ls, &lg, &ledger());
        assert_eq!((v.guilty, v.remedy), (Guilty::None, Remedy::NoAction));
        assert!(v.flagged);
    }

    #[test]
    fn wrong_reward_computation_is_caught() {
        let mut ls = ProtocolLog::new(Party::Server, 7);
        let lg = ProtocolLog::new(Party::Gateway, 7);
        ls.append(1, terms());
        ls.append(2, LogEvent::InitialReward { rho_1: Money::from_integer(2), c: ratio(2, 1) });
        let q = Money::from_integer(2);
        ls.append(
            5,
            LogEvent::RoundSettled {
                r: 1,
                acc: 8,
                quote_s: q.clone(),
                quote_g: q.clone(),
                rho: q,
                reward_total: Money::from_integer(15),
            },
        );
        let v = resolve_conflict(&ls, &lg, &ledger());
        assert_eq!(v.guilty, Guilty::Server);
        assert!(v.violations[0].rule.contains("miscomputed"));
    }
}
