use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mechanism::Money;
use crate::message::SessionId;
use crate::model::{Address, Step};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "installment", rename_all = "snake_case")]
pub enum Purpose {
    Reward,
    Fee(u64),
    Refund,
    Arbitration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub seq: u64,
    pub step: Step,
    pub session: Option<SessionId>,
    pub payer: Address,
    pub payee: Address,
    pub amount: Money,
    pub purpose: Purpose,
    pub prev: String,
    pub digest: String,
}

impl Receipt {
    fn compute_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.prev.as_bytes());
        h.update(self.seq.to_be_bytes());
        h.update(self.step.to_be_bytes());
        h.update(self.session.unwrap_or(u64::MAX).to_be_bytes());
        h.update(self.payer.0.to_be_bytes());
        h.update(self.payee.0.to_be_bytes());
        h.update(self.amount.to_string().as_bytes());
        h.update(serde_json::to_vec(&self.purpose).expect("purpose serializes"));
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("unknown account {0}")]
    UnknownAccount(Address),
    #[error("insufficient funds at {payer}: balance {balance}, needed {amount}")]
    InsufficientFunds { payer: Address, balance: Money, amount: Money },
}

const GENESIS: &str = "genesis";

/// Exact-balance payment ledger with a hash-chained receipt list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentLedger {
    balances: BTreeMap<Address, Money>,
    receipts: Vec<Receipt>,
    initial_total: Money,
}

impl PaymentLedger {
    pub fn new(initial: impl IntoIterator<Item = (Address, Money)>) -> Self {
        let balances: BTreeMap<_, _> = initial.into_iter().collect();
        let initial_total = balances.values().cloned().sum();
        PaymentLedger { balances, receipts: Vec::new(), initial_total }
    }

    pub fn balance(&self, a: Address) -> Option<&Money> {
        self.balances.get(&a)
    }

    pub fn balances(&self) -> &BTreeMap<Address, Money> {
        &self.balances
    }

    pub fn receipts(&self) -> &[Receipt] {
        &self.receipts
    }

    pub fn total(&self) -> Money {
        self.balances.values().cloned().sum()
    }

    pub fn initial_total(&self) -> &Money {
        &self.initial_total
    }

    /// Atomic transfer. On error nothing changes.
    pub fn pay(
        &mut self,
        step: Step,
        session: Option<SessionId>,
        payer: Address,
        payee: Address,
        amount: Money,
        purpose: Purpose,
    ) -> Result<Receipt, LedgerError> {
        let balance = self.balances.get(&payer).ok_or(LedgerError::UnknownAccount(payer))?;
        if !self.balances.contains_key(&payee) {
            return Err(LedgerError::UnknownAccount(payee));
        }
        let remaining = balance.checked_sub(&amount).ok_or_else(|| LedgerError::InsufficientFunds {
            payer,
            balance: balance.clone(),
            amount: amount.clone(),
        })?;
        self.balances.insert(payer, remaining);
        *self.balances.get_mut(&payee).expect("checked above") += &amount;
        let mut receipt = Receipt {
            seq: self.receipts.len() as u64,
            step,
            session,
            payer,
            payee,
            amount,
            purpose,
            prev: self.receipts.last().map_or_else(|| GENESIS.to_string(), |r| r.digest.clone()),
            digest: String::new(),
        };
        receipt.digest = receipt.compute_digest();
        self.receipts.push(receipt.clone());
        Ok(receipt)
    }

    pub fn find(&self, session: SessionId, purpose: Purpose) -> Option<&Receipt> {
        self.receipts.iter().find(|r| r.session == Some(session) && r.purpose == purpose)
    }

    pub fn session_receipts(&self, session: SessionId) -> impl Iterator<Item = &Receipt> {
        self.receipts.iter().filter(move |r| r.session == Some(session))
    }

    /// Every receipt links to its predecessor and its digest recomputes.
    pub fn verify_receipts(&self) -> bool {
        let mut prev = GENESIS.to_string();
        for (i, r) in self.receipts.iter().enumerate() {
            if r.seq != i as u64 || r.prev != prev || r.digest != r.compute_digest() {
                return false;
            }
            prev = r.digest.clone();
        }
        true
    }

    /// Balances replayed from the initial state through every receipt.
    pub fn replay_matches(&self, initial: &BTreeMap<Address, Money>) -> bool {
        let mut b = initial.clone();
        for r in &self.receipts {
            let Some(payer) = b.get(&r.payer).and_then(|x| x.checked_sub(&r.amount)) else {
                return false;
            };
            b.insert(r.payer, payer);
            *b.entry(r.payee).or_default() += &r.amount;
        }
        b == self.balances
    }

    pub fn conserved(&self) -> bool {
        self.total() == self.initial_total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger() -> PaymentLedger {
        PaymentLedger::new([(Address(0), Money::from_integer(150)), (Address(1), Money::zero())])
    }

    #[test]
    fn transfer_conserves_and_records() {
        let mut l = ledger();
        let r = l.pay(3, Some(1), Address(0), Address(1), Money::from_integer(100), Purpose::Reward).unwrap();
        assert_eq!(l.balance(Address(0)), Some(&Money::from_integer(50)));
        assert_eq!(l.balance(Address(1)), Some(&Money::from_integer(100)));
        assert_eq!(r.seq, 0);
        assert!(l.conserved());
        assert!(l.verify_receipts());
    }

    #[test]
    fn zero_amount_is_valid_receipt() {
        let mut l = ledger();
        l.pay(0, None, Address(0), Address(1), Money::zero(), Purpose::Fee(1)).unwrap();
        assert_eq!(l.receipts().len(), 1);
        assert_eq!(l.balance(Address(0)), Some(&Money::from_integer(150)));
    }

    #[test]
    fn insufficient_funds_changes_nothing() {
        let mut l = ledger();
        let before = l.clone();
        let err = l.pay(0, None, Address(1), Address(0), Money::new(1, 2), Purpose::Refund);
        assert!(matches!(err, Err(LedgerError::InsufficientFunds { .. })));
        assert_eq!(l, before);
    }

    #[test]
    fn tampering_breaks_chain() {
        let mut l = ledger();
        l.pay(1, None, Address(0), Address(1), Money::from_integer(5), Purpose::Reward).unwrap();
        l.pay(2, None, Address(0), Address(1), Money::from_integer(5), Purpose::Fee(1)).unwrap();
        let initial = [(Address(0), Money::from_integer(150)), (Address(1), Money::zero())].into();
        assert!(l.replay_matches(&initial));
        l.receipts[0].amount = Money::from_integer(6);
        assert!(!l.verify_receipts());
    }
}
