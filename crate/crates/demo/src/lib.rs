//! Browser bindings for the simulator. Every export takes and returns JSON
//! strings so the same functions run natively in tests.

use num_rational::BigRational;
use remotegate::mechanism::dsic::{check_grid, gateway_utility, rational_grid, welfare_ratio, GatewayUtility, PriceRule};
use remotegate::mechanism::{format_rational, parse_rational, reward_total, BidSchedule, Money};
use remotegate::scenario::{bundled, run_scenario as run, ScenarioConfig, BUNDLED};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize, Deserialize)]
pub struct CurvePoint {
    pub round: usize,
    pub acc: u64,
    pub bid: Money,
    pub reward: Money,
    /// Reward as a float, for plotting only.
    pub reward_f64: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GridCell {
    pub v_s: Money,
    pub v_g: Money,
    /// Gateway misreports that strictly beat reporting `v_g`.
    pub profitable_misreports: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GridResult {
    pub triples: usize,
    pub server_violations: usize,
    pub gateway_violations: usize,
    pub welfare_ratio: Option<String>,
    pub cells: Vec<GridCell>,
}

fn to_f64(r: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap_or(f64::NAN)
}

fn money(s: &str, what: &str) -> Result<Money, String> {
    s.parse().map_err(|e| format!("{what}: {e}"))
}

/// Reward after each round when both sides bid honestly from `rho_1` and the
/// gateway achieves the accuracies in `accs_json` (a JSON array of counts).
#[wasm_bindgen]
pub fn reward_curve(rho_1: &str, c: &str, accs_json: &str) -> Result<String, String> {
    let rho_1 = money(rho_1, "rho_1")?;
    let c = parse_rational(c).map_err(|e| format!("c: {e}"))?;
    let accs: Vec<u64> = serde_json::from_str(accs_json).map_err(|e| format!("accuracies: {e}"))?;
    let mut schedule = BidSchedule::new(rho_1, c).map_err(|e| e.to_string())?;
    let points: Vec<CurvePoint> = accs
        .iter()
        .enumerate()
        .map(|(i, &acc)| {
            let bid = schedule.settle(acc);
            let reward = reward_total(&bid, schedule.accs());
            CurvePoint { round: i + 1, acc, reward_f64: to_f64(reward.as_ratio()), bid, reward }
        })
        .collect();
    Ok(serde_json::to_string(&points).expect("curve serializes"))
}

fn parse_rule(rule: &str) -> Result<PriceRule, String> {
    match rule.trim() {
        "min" => Ok(PriceRule::MinOfReports),
        other => match other.strip_prefix("posted:") {
            Some(p) => Ok(PriceRule::Posted(money(p, "posted price")?)),
            None => Err(format!("unknown rule {other:?}, expected \"min\" or \"posted:<price>\"")),
        },
    }
}

/// Truthfulness check over the grid `1/denom ..= n/denom`, plus a per-cell
/// count of profitable gateway misreports for a heat map.
#[wasm_bindgen]
pub fn dsic_grid(rule: &str, utility: &str, n: u32, denom: u32) -> Result<String, String> {
    if n == 0 || n > 40 || denom == 0 {
        return Err("grid size must be in 1..=40 and the denominator positive".into());
    }
    let rule = parse_rule(rule)?;
    let model = match utility {
        "payment" => GatewayUtility::Payment,
        "surplus" => GatewayUtility::Surplus,
        other => return Err(format!("unknown utility {other:?}, expected \"payment\" or \"surplus\"")),
    };
    let grid = rational_grid(n.into(), denom.into());
    let summary = check_grid(&rule, model, &grid);
    let mut cells = Vec::with_capacity(grid.len() * grid.len());
    for v_s in &grid {
        for v_g in &grid {
            let truthful = gateway_utility(&rule, model, v_s, v_g, v_g);
            let profitable_misreports =
                grid.iter().filter(|w| gateway_utility(&rule, model, v_s, v_g, w) > truthful).count();
            cells.push(GridCell { v_s: v_s.clone(), v_g: v_g.clone(), profitable_misreports });
        }
    }
    let result = GridResult {
        triples: summary.triples,
        server_violations: summary.server_violations,
        gateway_violations: summary.gateway_violations,
        welfare_ratio: welfare_ratio(&rule, &grid).map(|r| format_rational(&r)),
        cells,
    };
    Ok(serde_json::to_string(&result).expect("grid serializes"))
}

/// Names of the bundled scenarios as a JSON array.
#[wasm_bindgen]
pub fn scenario_names() -> String {
    serde_json::to_string(&BUNDLED.iter().map(|(n, _)| *n).collect::<Vec<_>>()).expect("names serialize")
}

/// Runs a bundled scenario by name, or a scenario given as TOML text, and
/// returns the JSON run report. A negative seed keeps the scenario's own.
#[wasm_bindgen]
pub fn run_scenario(scenario: &str, seed: f64) -> Result<String, String> {
    let mut config = match bundled(scenario.trim()) {
        Some(c) => c,
        None => ScenarioConfig::from_toml(scenario).map_err(|e| e.to_string())?,
    };
    if seed >= 0.0 {
        config.seed = seed as u64;
    }
    let report = run(&config).map_err(|e| e.to_string())?;
    Ok(report.to_json())
}
