//! Truthfulness checks for the fixed-price initial reward rule.

use num_rational::BigRational;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use super::{format_rational, select_initial_reward, Money};

/// How the initial reward is priced from the two reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriceRule {
    /// Trade at the gateway's report when it does not exceed the server's.
    MinOfReports,
    /// Trade at a posted price when both reports accept it.
    Posted(Money),
}

/// `(traded, price)` under the rule for the given reports.
pub fn outcome(rule: &PriceRule, report_s: &Money, report_g: &Money) -> Option<Money> {
    match rule {
        PriceRule::MinOfReports => select_initial_reward(report_s, report_g).ok(),
        PriceRule::Posted(p) => (report_g <= p && p <= report_s).then(|| p.clone()),
    }
}

/// How the gateway values a trade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayUtility {
    /// The payment received when trade occurs, zero otherwise.
    Payment,
    /// Payment minus the gateway's true cost `v_G` when trade occurs.
    Surplus,
}

pub fn gateway_utility(
    rule: &PriceRule,
    model: GatewayUtility,
    v_s: &Money,
    v_g: &Money,
    report_g: &Money,
) -> BigRational {
    match (outcome(rule, v_s, report_g), model) {
        (Some(price), GatewayUtility::Payment) => price.into_ratio(),
        (Some(price), GatewayUtility::Surplus) => price.as_ratio() - v_g.as_ratio(),
        (None, _) => BigRational::zero(),
    }
}

/// Server utility `v_S − ρ₁` on trade, zero otherwise. May be negative.
pub fn server_utility(rule: &PriceRule, v_s: &Money, report_s: &Money, report_g: &Money) -> BigRational {
    match outcome(rule, report_s, report_g) {
        Some(price) => v_s.as_ratio() - price.as_ratio(),
        None => BigRational::zero(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub v_s: Money,
    pub v_g: Money,
    pub misreport: Money,
    pub truthful_utility: String,
    pub misreport_utility: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DsicReport {
    pub triples: usize,
    pub server_violations: usize,
    pub gateway_violations: usize,
    pub first_server_violation: Option<Violation>,
    pub first_gateway_violation: Option<Violation>,
}

impl DsicReport {
    pub fn total_violations(&self) -> usize {
        self.server_violations + self.gateway_violations
    }
}

/// Enumerates every `(v_S, v_G, misreport)` triple over `grid` and counts,
/// for each side, the misreports that strictly beat truth-telling when the
/// other side reports truthfully.
pub fn check_grid(rule: &PriceRule, model: GatewayUtility, grid: &[Money]) -> DsicReport {
    let mut report = DsicReport::default();
    for v_s in grid {
        for v_g in grid {
            let truthful_g = gateway_utility(rule, model, v_s, v_g, v_g);
            let truthful_s = server_utility(rule, v_s, v_s, v_g);
            for w in grid {
                report.triples += 1;
                let lie_g = gateway_utility(rule, model, v_s, v_g, w);
                if lie_g > truthful_g {
                    report.gateway_violations += 1;
                    report.first_gateway_violation.get_or_insert_with(|| Violation {
                        v_s: v_s.clone(),
                        v_g: v_g.clone(),
                        misreport: w.clone(),
                        truthful_utility: format_rational(&truthful_g),
                        misreport_utility: format_rational(&lie_g),
                    });
                }
                let lie_s = server_utility(rule, v_s, w, v_g);
                if lie_s > truthful_s {
                    report.server_violations += 1;
                    report.first_server_violation.get_or_insert_with(|| Violation {
                        v_s: v_s.clone(),
                        v_g: v_g.clone(),
                        misreport: w.clone(),
                        truthful_utility: format_rational(&truthful_s),
                        misreport_utility: format_rational(&lie_s),
                    });
                }
            }
        }
    }
    report
}

/// `n` evenly spaced values `1/d, 2/d, …, n/d`.
pub fn rational_grid(n: u64, denom: u64) -> Vec<Money> {
    (1..=n).map(|i| Money::new(i, denom)).collect()
}

/// Realized gains from trade over the grid under truthful reports, as a
/// fraction of the first-best gains (trade whenever `v_G ≤ v_S`).
pub fn welfare_ratio(rule: &PriceRule, grid: &[Money]) -> Option<BigRational> {
    let mut realized = BigRational::zero();
    let mut optimal = BigRational::zero();
    for v_s in grid {
        for v_g in grid {
            if v_g <= v_s {
                let gain = v_s.as_ratio() - v_g.as_ratio();
                optimal += &gain;
                if outcome(rule, v_s, v_g).is_some() {
                    realized += gain;
                }
            }
        }
    }
    (!optimal.is_zero()).then(|| realized / optimal)
}
