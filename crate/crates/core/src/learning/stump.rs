use serde::{Deserialize, Serialize};

use super::Classifier;
use crate::model::{Label, LabeledPacket, Packet};
use crate::netsim::PacketFilter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// ATTACK when the feature exceeds the threshold.
    Above,
    /// ATTACK when the feature is at most the threshold.
    Below,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Stump {
    Constant { label: Label },
    Split { dim: usize, threshold: u32, polarity: Polarity },
}

impl Stump {
    pub fn predict_one(&self, features: &[u32]) -> Label {
        match *self {
            Stump::Constant { label } => label,
            Stump::Split { dim, threshold, polarity } => {
                let x = features.get(dim).copied().unwrap_or(0);
                let above = x > threshold;
                if above == (polarity == Polarity::Above) {
                    Label::Attack
                } else {
                    Label::Good
                }
            }
        }
    }

    pub fn errors(&self, pool: &[(Vec<u32>, Label)]) -> usize {
        pool.iter().filter(|(x, y)| self.predict_one(x) != *y).count()
    }
}

/// Exhaustive stump search: the `(dim, threshold, polarity)` with the
/// fewest training errors, ties to the lowest dimension, then the lowest
/// threshold, then `Above`. Candidate thresholds sit midway between
/// consecutive observed values, so every distinct split of the pool is
/// tried with the widest integer margin on both sides.
pub fn fit_stump(pool: &[(Vec<u32>, Label)]) -> Stump {
    let Some((_, first)) = pool.first() else {
        return Stump::Constant { label: Label::Good };
    };
    if pool.iter().all(|(_, y)| y == first) {
        return Stump::Constant { label: *first };
    }
    let dims = pool.iter().map(|(x, _)| x.len()).max().unwrap_or(0);
    let mut best: Option<(usize, Stump)> = None;
    for dim in 0..dims {
        let mut values: Vec<u32> = pool.iter().map(|(x, _)| x.get(dim).copied().unwrap_or(0)).collect();
        values.sort_unstable();
        values.dedup();
        let mut thresholds: Vec<u32> = values.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2).collect();
        thresholds.extend(values.last());
        for &threshold in &thresholds {
            for polarity in [Polarity::Above, Polarity::Below] {
                let s = Stump::Split { dim, threshold, polarity };
                let e = s.errors(pool);
                if best.as_ref().is_none_or(|(be, _)| e < *be) {
                    best = Some((e, s));
                }
            }
        }
    }
    best.map(|(_, s)| s).unwrap_or(Stump::Constant { label: Label::Good })
}

/// Cumulative stump learner: every fit folds the new examples into the
/// pool and refits from scratch.
#[derive(Debug, Clone, Copy, Default)]
pub struct StumpLearner;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StumpModel {
    pub pool: Vec<(Vec<u32>, Label)>,
    pub stump: Stump,
}

impl Default for StumpModel {
    fn default() -> Self {
        StumpModel { pool: Vec::new(), stump: Stump::Constant { label: Label::Good } }
    }
}

impl StumpModel {
    pub fn training_errors(&self) -> usize {
        self.stump.errors(&self.pool)
    }
}

impl Classifier for StumpLearner {
    type Model = StumpModel;

    fn name(&self) -> &'static str {
        "stump"
    }

    fn fit(&self, prev: &StumpModel, examples: &[LabeledPacket]) -> StumpModel {
        let mut pool = prev.pool.clone();
        pool.extend(examples.iter().map(|e| (e.packet.features.clone(), e.label)));
        let stump = fit_stump(&pool);
        StumpModel { pool, stump }
    }

    fn predict(&self, model: &StumpModel, packets: &[Packet]) -> Vec<Label> {
        packets.iter().map(|p| model.stump.predict_one(&p.features)).collect()
    }
}

/// A deployed stump: drops DATA packets it classifies as attacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StumpFilter(pub Stump);

impl PacketFilter for StumpFilter {
    fn blocks(&self, packet: &Packet) -> bool {
        self.0.predict_one(&packet.features) == Label::Attack
    }

    fn describe(&self) -> String {
        match self.0 {
            Stump::Constant { label } => format!("constant {label:?}"),
            Stump::Split { dim, threshold, polarity } => {
                let op = if polarity == Polarity::Above { ">" } else { "<=" };
                format!("x[{dim}] {op} {threshold}")
            }
        }
    }
}
