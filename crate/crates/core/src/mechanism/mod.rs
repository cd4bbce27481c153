//! Commitments, exact money, the initial-reward rule and the per-round bid
//! recurrence.

mod bids;
pub mod commitment;
pub mod dsic;
mod money;

pub use bids::{next_bid, negotiate_round, reward_total, select_initial_reward, BidError, BidSchedule};
pub use commitment::{commit, commit_value, open, CanonicalEncode, Commitment, Nonce, Opening};
pub use money::{
    format_rational, option_rational_serde, parse_rational, rational_serde, Money, RationalError,
    RationalText,
};

use num_rational::BigRational;
use serde::{Deserialize, Serialize};

/// Negotiated values for one server/gateway session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegotiationState {
    pub v_s: Money,
    pub v_g: Money,
    pub rho_1: Money,
    pub gamma_service: u64,
    pub fee: Money,
    pub iota: u64,
    #[serde(with = "rational_serde")]
    pub epsilon: BigRational,
}

/// One row of the per-round reward table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardLedgerRow {
    pub r: usize,
    pub rho_s: Money,
    pub rho_g: Money,
    pub rho: Money,
    pub acc: u64,
    pub reward_total: Money,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub flagged: bool,
}
