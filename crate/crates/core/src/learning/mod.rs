//! Interactive learning phase: accuracy accounting, the classifier
//! contract, the reference stump learner and both parties' round loops.

mod gateway;
mod server;
mod stump;

pub use gateway::{gateway_learning, GatewayBehavior, GatewayLearningParams, GatewayLearningResult};
pub use server::{server_learning, ServerBehavior, ServerLearningParams};
pub use stump::{fit_stump, Polarity, Stump, StumpFilter, StumpLearner, StumpModel};

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mechanism::{Money, RewardLedgerRow};
use crate::model::{Label, LabeledPacket, Packet, Step};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("label lists differ in length: {0} vs {1}")]
pub struct LengthMismatch(pub usize, pub usize);

/// Positions where the two label lists agree.
pub fn accuracy(labels_true: &[Label], labels_pred: &[Label]) -> Result<u64, LengthMismatch> {
    if labels_true.len() != labels_pred.len() {
        return Err(LengthMismatch(labels_true.len(), labels_pred.len()));
    }
    Ok(labels_true.iter().zip(labels_pred).filter(|(a, b)| a == b).count() as u64)
}

/// `acc ≥ (1 − ε)·n`, exactly.
pub fn meets_tolerance(acc: u64, n: usize, epsilon: &BigRational) -> bool {
    let one = BigRational::from_integer(1.into());
    let needed = (one - epsilon) * BigRational::from_integer(BigInt::from(n));
    BigRational::from_integer(BigInt::from(acc)) >= needed
}

/// `mismatches > ε·n`, exactly.
pub fn exceeds_tolerance(mismatches: u64, n: usize, epsilon: &BigRational) -> bool {
    BigRational::from_integer(BigInt::from(mismatches)) > epsilon * BigRational::from_integer(BigInt::from(n))
}

/// A learner the gateway may plug in. Fitting is cumulative: the model
/// carries whatever it needs from earlier rounds.
pub trait Classifier {
    type Model: Clone + Default;

    fn name(&self) -> &'static str;
    fn fit(&self, prev: &Self::Model, examples: &[LabeledPacket]) -> Self::Model;
    fn predict(&self, model: &Self::Model, packets: &[Packet]) -> Vec<Label>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LearningStatus {
    Accepted,
    RoundLimit,
    Timeout,
    AbortServerLied,
    AbortCommitFail,
    NoTrade,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningRound {
    pub r: u32,
    pub train_ids: Vec<u64>,
    pub test_ids: Vec<u64>,
    pub labels_true: Vec<Label>,
    pub labels_pred: Vec<Label>,
    pub acc: u64,
    pub ledger_row: RewardLedgerRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningOutcome {
    pub status: LearningStatus,
    pub rounds: Vec<LearningRound>,
    pub final_reward: Money,
    pub finished_at: Step,
    /// Rounds where the bid recurrence was undefined.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flagged_rounds: Vec<usize>,
}

pub(crate) const REASON_SERVER_LIED: &str = "server lied";
pub const REASON_COMMIT_FAIL: &str = "commitment failure";
pub(crate) const REASON_ROUND_LIMIT: &str = "round limit";

pub(crate) fn status_from_abort(reason: &str) -> LearningStatus {
    match reason {
        REASON_SERVER_LIED => LearningStatus::AbortServerLied,
        REASON_COMMIT_FAIL => LearningStatus::AbortCommitFail,
        REASON_ROUND_LIMIT => LearningStatus::RoundLimit,
        _ => LearningStatus::Timeout,
    }
}

impl LearningOutcome {
    pub fn accepted(&self) -> bool {
        self.status == LearningStatus::Accepted
    }
}
