use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::mechanism::{rational_serde, Money};
use crate::message::SessionId;
use crate::model::{Address, Step};
use num_rational::BigRational;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Party {
    Server,
    Gateway,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreachReason {
    /// Attack rate above tolerance, gateway still on path, not spoofed.
    FilterIneffective,
    FeeMissing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    SessionOpened {
        peer: Address,
    },
    Terms {
        gamma_s: u64,
        gamma_g: u64,
        v_g: Money,
        fee: Money,
        iota: u64,
    },
    TermsRejected {
        reason: String,
    },
    InitialReward {
        rho_1: Money,
        #[serde(with = "rational_serde")]
        c: BigRational,
    },
    RoundSettled {
        r: u32,
        acc: u64,
        quote_s: Money,
        quote_g: Money,
        rho: Money,
        reward_total: Money,
    },
    Aborted {
        reason: String,
    },
    PaymentInitiated {
        r: u32,
        reward: Money,
    },
    RewardPaid {
        amount: Money,
        receipt: u64,
    },
    FilterDeployed {
        rule: String,
    },
    FilterRemoved {
        reason: String,
    },
    ServiceStarted {
        start: Step,
        iota: u64,
    },
    InstallmentObserved {
        installment: u64,
        window_start: Step,
        window_end: Step,
        attack_packets: u64,
        #[serde(with = "crate::mechanism::option_rational_serde", default)]
        mean_interval: Option<BigRational>,
        #[serde(with = "rational_serde")]
        threshold: BigRational,
    },
    Rediscovered {
        installment: u64,
        gateway_present: bool,
    },
    Respoofchecked {
        installment: u64,
        spoofed: bool,
    },
    FeePaid {
        installment: u64,
        receipt: u64,
    },
    FeeReceived {
        installment: u64,
        receipt: u64,
    },
    PaymentFailed {
        installment: u64,
        reason: String,
    },
    Breach {
        installment: u64,
        reason: BreachReason,
    },
    ServiceCompleted,
    Verdict {
        guilty: String,
        remedy: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub step: Step,
    #[serde(flatten)]
    pub event: LogEvent,
    pub prev: String,
    pub digest: String,
}

fn entry_digest(prev: &str, seq: u64, step: Step, event: &LogEvent) -> String {
    let mut h = Sha256::new();
    h.update(prev.as_bytes());
    h.update(seq.to_be_bytes());
    h.update(step.to_be_bytes());
    h.update(serde_json::to_vec(event).expect("log events serialize"));
    hex::encode(h.finalize())
}

/// One party's append-only session log. Entries are hash-chained so any
/// later edit is detectable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolLog {
    pub owner: Party,
    pub session: SessionId,
    entries: Vec<LogEntry>,
    breach: bool,
}

impl ProtocolLog {
    pub fn new(owner: Party, session: SessionId) -> Self {
        ProtocolLog { owner, session, entries: Vec::new(), breach: false }
    }

    pub fn append(&mut self, step: Step, event: LogEvent) -> &LogEntry {
        if matches!(event, LogEvent::Breach { .. }) {
            self.breach = true;
        }
        let seq = self.entries.len() as u64;
        let prev = self.entries.last().map_or_else(|| format!("{:?}:{}", self.owner, self.session), |e| e.digest.clone());
        let digest = entry_digest(&prev, seq, step, &event);
        self.entries.push(LogEntry { seq, step, event, prev, digest });
        self.entries.last().expect("just pushed")
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn breach(&self) -> bool {
        self.breach
    }

    pub fn head(&self) -> Option<&str> {
        self.entries.last().map(|e| e.digest.as_str())
    }

    /// Chain intact, steps non-decreasing, and the breach flag agrees with
    /// the entries.
    pub fn verify(&self) -> bool {
        let mut prev = format!("{:?}:{}", self.owner, self.session);
        let mut last_step = 0;
        for (i, e) in self.entries.iter().enumerate() {
            if e.seq != i as u64 || e.prev != prev || e.step < last_step {
                return false;
            }
            if e.digest != entry_digest(&e.prev, e.seq, e.step, &e.event) {
                return false;
            }
            prev = e.digest.clone();
            last_step = e.step;
        }
        let has_breach = self.entries.iter().any(|e| matches!(e.event, LogEvent::Breach { .. }));
        has_breach == self.breach
    }

    /// True if `other` is this log with zero or more entries appended.
    pub fn extends(&self, earlier: &ProtocolLog) -> bool {
        self.owner == earlier.owner
            && self.session == earlier.session
            && self.entries.len() >= earlier.entries.len()
            && self.entries[..earlier.entries.len()] == earlier.entries[..]
            && (self.breach || !earlier.breach)
    }

    pub fn first_breach(&self) -> Option<&LogEntry> {
        self.entries.iter().find(|e| matches!(e.event, LogEvent::Breach { .. }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two() -> BigRational {
        BigRational::from_integer(2.into())
    }

    #[test]
    fn breach_flag_is_sticky() {
        let mut log = ProtocolLog::new(Party::Server, 1);
        log.append(0, LogEvent::SessionOpened { peer: Address(2) });
        assert!(!log.breach());
        log.append(5, LogEvent::Breach { installment: 1, reason: BreachReason::FilterIneffective });
        log.append(6, LogEvent::ServiceCompleted);
        assert!(log.breach());
        assert!(log.verify());
        assert_eq!(log.first_breach().map(|e| e.step), Some(5));
    }

    #[test]
    fn append_only_check() {
        let mut log = ProtocolLog::new(Party::Gateway, 3);
        log.append(1, LogEvent::ServiceCompleted);
        let snapshot = log.clone();
        log.append(2, LogEvent::FilterRemoved { reason: "end".into() });
        assert!(log.extends(&snapshot));
        assert!(!snapshot.extends(&log));
    }

    #[test]
    fn edits_are_detected() {
        let mut log = ProtocolLog::new(Party::Server, 1);
        log.append(1, LogEvent::InitialReward { rho_1: Money::from_integer(3), c: two() });
        log.append(2, LogEvent::ServiceCompleted);
        log.entries[0].event = LogEvent::InitialReward { rho_1: Money::from_integer(4), c: two() };
        assert!(!log.verify());
    }
}
