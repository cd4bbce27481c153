use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Money;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BidError {
    #[error("no trade: server valuation {v_s} is below gateway valuation {v_g}")]
    NoTrade { v_s: Money, v_g: Money },
    #[error("cumulative accuracy is zero through round {round}")]
    ZeroAccuracy { round: usize },
    #[error("bid recurrence needs at least two rounds of accuracies")]
    TooFewRounds,
    #[error("constant c must exceed 1")]
    BadConstant,
}

/// Fixed-price rule: the initial per-example reward is the gateway's ask
/// whenever it does not exceed the server's valuation.
pub fn select_initial_reward(v_s: &Money, v_g: &Money) -> Result<Money, BidError> {
    if v_g <= v_s {
        Ok(v_g.clone())
    } else {
        Err(BidError::NoTrade {
            v_s: v_s.clone(),
            v_g: v_g.clone(),
        })
    }
}

pub fn negotiate_round(rho_s: &Money, rho_g: &Money) -> Money {
    Money::min_of(rho_s, rho_g)
}

fn sum(accs: &[u64]) -> BigRational {
    BigRational::from_integer(BigInt::from(accs.iter().sum::<u64>()))
}

/// `prev · Σ_{i<r} acc_i / (c · Σ_{i≤r} acc_i)` where `r = accs.len()`.
pub fn next_bid(prev_bid: &Money, accs: &[u64], c: &BigRational) -> Result<Money, BidError> {
    if *c <= BigRational::one() {
        return Err(BidError::BadConstant);
    }
    let r = accs.len();
    if r < 2 {
        return Err(BidError::TooFewRounds);
    }
    let total = sum(accs);
    if total.is_zero() {
        return Err(BidError::ZeroAccuracy { round: r });
    }
    let factor = sum(&accs[..r - 1]) / (c * total);
    Ok(prev_bid.scale(&factor))
}

pub fn reward_total(rho: &Money, accs: &[u64]) -> Money {
    rho.scale(&sum(accs))
}

/// One party's running bid state across learning rounds.
///
/// Before round `r` is tested, a party can only commit to a quote: the
/// per-example bid `ρ₁` in round 1, and the reward budget
/// `ρ_{r−1} · Σ_{i<r} acc_i / c` from round 2 on. Once `acc_r` is known,
/// `settle` turns the quote into the per-example bid of the recurrence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BidSchedule {
    c: BigRational,
    accs: Vec<u64>,
    bids: Vec<Money>,
    flagged: Vec<usize>,
}

impl BidSchedule {
    pub fn new(rho_1: Money, c: BigRational) -> Result<Self, BidError> {
        if c <= BigRational::one() {
            return Err(BidError::BadConstant);
        }
        Ok(BidSchedule {
            c,
            accs: Vec::new(),
            bids: vec![rho_1],
            flagged: Vec::new(),
        })
    }

    /// Rounds settled so far.
    pub fn rounds(&self) -> usize {
        self.accs.len()
    }

    pub fn accs(&self) -> &[u64] {
        &self.accs
    }

    /// Per-example bids for rounds 1..=rounds(); round 1 is always present.
    pub fn bids(&self) -> &[Money] {
        &self.bids
    }

    pub fn current_bid(&self) -> &Money {
        self.bids.last().expect("schedule always holds rho_1")
    }

    /// Rounds where the recurrence was undefined and the bid was carried over.
    pub fn flagged_rounds(&self) -> &[usize] {
        &self.flagged
    }

    /// Quote for the next unsettled round.
    pub fn round_quote(&self) -> Money {
        let r = self.accs.len() + 1;
        if r == 1 {
            return self.bids[0].clone();
        }
        let prev = &self.bids[r - 2];
        prev.scale(&(sum(&self.accs) / &self.c))
    }

    /// Converts an agreed quote into a per-example bid given the round's
    /// accuracy. Does not mutate the schedule.
    pub fn bid_from_quote(&self, quote: &Money, acc: u64) -> (Money, bool) {
        let r = self.accs.len() + 1;
        if r == 1 {
            return (quote.clone(), false);
        }
        let total = sum(&self.accs) + BigRational::from_integer(acc.into());
        if total.is_zero() {
            return (self.current_bid().clone(), true);
        }
        (quote.scale(&(BigRational::one() / total)), false)
    }

    /// Records the round's accuracy and returns the resulting own bid.
    pub fn settle(&mut self, acc: u64) -> Money {
        let quote = self.round_quote();
        self.settle_with_quote(&quote, acc)
    }

    /// Records the round's accuracy using an externally agreed quote
    /// (the minimum of both parties' quotes) and returns the bid.
    pub fn settle_with_quote(&mut self, quote: &Money, acc: u64) -> Money {
        let (bid, flagged) = self.bid_from_quote(quote, acc);
        let r = self.accs.len() + 1;
        self.accs.push(acc);
        if r == 1 {
            self.bids[0] = bid.clone();
        } else {
            self.bids.push(bid.clone());
        }
        if flagged {
            self.flagged.push(r);
        }
        bid
    }

    /// `ρ_r · Σ_{i≤r} acc_i` for the last settled round.
    pub fn reward(&self) -> Money {
        if self.accs.is_empty() {
            return Money::zero();
        }
        reward_total(self.current_bid(), &self.accs)
    }
}
