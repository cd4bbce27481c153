//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::HashSet;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use remotegate::learning::LearningStatus;
use remotegate::lifecycle::{BreachReason, Guilty, LogEvent, Party, Purpose, Remedy, ServerRunStatus};
use remotegate::mechanism::commitment::{commit, open, Nonce};
use remotegate::mechanism::dsic::{check_grid, rational_grid, GatewayUtility, PriceRule};
use remotegate::mechanism::{next_bid, Money};
use remotegate::scenario::{bundled, simulate, BUNDLED};

const STALL_MAX_ROUNDS: usize = 4;
const STALL_MAX_TEST: u32 = 6;
const STALL_TIME_LIMIT: Duration = Duration::from_secs(60);
const HALVING_SEQUENCES: usize = 1000;
const DSIC_GRID: u64 = 20;
const DSIC_DENOM: u64 = 4;
const GOLDEN_MAX_ATTACK_PACKETS: u64 = 1;
const DISCOVERY_TOPOLOGIES: usize = 50;
const DISCOVERY_MAX_NODES: u32 = 12;
const AUDIT_SEEDS: u64 = 4;
const COMMITMENT_PAIRS: usize = 10_000;

type Outcome = Result<String, String>;

fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

fn pow2(k: usize) -> BigRational {
    BigRational::from_integer(BigInt::from(1u64 << k))
}

/// Counts-indexed table: sequence of per-round accuracies (base n+1 digits).
struct Table {
    base: usize,
    reward: Vec<Option<BigRational>>,
}

impl Table {
    fn index(&self, accs: &[u64]) -> usize {
        accs.iter().fold(0, |i, &a| i * self.base + a as usize) + offset(self.base, accs.len())
    }
}

fn offset(base: usize, len: usize) -> usize {
    (0..len).map(|k| base.pow(k as u32)).sum()
}

fn all_sequences(n: u64, len: usize) -> Vec<Vec<u64>> {
    (0..len).fold(vec![vec![]], |acc, _| {
        acc.into_iter().flat_map(|s| (0..=n).map(move |a| [s.clone(), vec![a]].concat())).collect()
    })
}

/// Gateway label manipulation, brute force. For each honest run that
/// completes at round r*, every strategy submits, per round, any label
/// vector that is wrong wherever the gateway's model is wrong (a gateway
/// cannot label better than its model). Rewards come from the protocol's
/// bid exchange and are checked against the closed form ρ₁·acc₁ / 2^{r−1}.
fn criterion_stalling() -> Outcome {
    let start = Instant::now();
    let rho_1 = Money::new(7, 3);
    let c = ratio(2, 1);
    let mut strategies: u64 = 0;
    let mut stalls: u64 = 0;
    for n in 1..=STALL_MAX_TEST {
        let base = n as usize + 1;
        let size = offset(base, STALL_MAX_ROUNDS + 1);
        let mut table = Table { base, reward: vec![None; size] };
        for len in 1..=STALL_MAX_ROUNDS {
            for accs in all_sequences(u64::from(n), len) {
                let rewards = common::protocol_rewards(&rho_1, &c, &accs);
                let got = rewards.last().unwrap().as_ratio().clone();
                let closed = rho_1.as_ratio() * BigRational::from_integer(accs[0].into()) / pow2(len - 1);
                if got != closed {
                    return Err(format!("reward for {accs:?} is {got}, closed form {closed}"));
                }
                let i = table.index(&accs);
                table.reward[i] = Some(got);
            }
        }
        for r_star in 1..=STALL_MAX_ROUNDS {
            for prefix in all_sequences(u64::from(n) - 1, r_star - 1) {
                let honest: Vec<u64> = prefix.iter().copied().chain([u64::from(n)]).collect();
                let honest_reward = table.reward[table.index(&honest)].clone().unwrap();
                let mut le = vec![true; size];
                let mut stall_ok = vec![true; size];
                for len in r_star..=STALL_MAX_ROUNDS {
                    for accs in all_sequences(u64::from(n), len) {
                        if accs[len - 1] != u64::from(n) {
                            continue;
                        }
                        let i = table.index(&accs);
                        let reward = table.reward[i].as_ref().unwrap();
                        le[i] = reward <= &honest_reward;
                        let pure = accs[..r_star - 1] == prefix[..] && accs[r_star - 1..len - 1].iter().all(|&a| a < u64::from(n));
                        if pure {
                            let zeta = len - r_star;
                            let at_r_star = table.reward[table.index(&accs[..r_star])].as_ref().unwrap();
                            let mut ok = *reward == at_r_star / pow2(zeta);
                            if r_star >= 2 {
                                ok &= *reward == &honest_reward / pow2(zeta);
                            }
                            stall_ok[i] = ok;
                        }
                    }
                }
                let mut ctx = Dfs { n, prefix: &prefix, r_star, table: &table, le: &le, stall_ok: &stall_ok, strategies: 0, stalls: 0, failure: None };
                ctx.walk(&mut Vec::new());
                if let Some(f) = ctx.failure {
                    return Err(f);
                }
                strategies += ctx.strategies;
                stalls += ctx.stalls;
            }
        }
    }
    let elapsed = start.elapsed();
    let msg = format!("{strategies} strategies ({stalls} pure stalls) in {:.1}s", elapsed.as_secs_f64());
    if elapsed < STALL_TIME_LIMIT { Ok(msg) } else { Err(format!("{msg}, over the time limit")) }
}

struct Dfs<'a> {
    n: u32,
    prefix: &'a [u64],
    r_star: usize,
    table: &'a Table,
    le: &'a [bool],
    stall_ok: &'a [bool],
    strategies: u64,
    stalls: u64,
    failure: Option<String>,
}

impl Dfs<'_> {
    fn walk(&mut self, accs: &mut Vec<u64>) {
        if self.failure.is_some() {
            return;
        }
        let r = accs.len() + 1;
        if r > STALL_MAX_ROUNDS {
            // Never accepted within the round limit: no reward.
            self.strategies += 1;
            return;
        }
        let model_correct = if r < self.r_star { self.prefix[r - 1] as u32 } else { self.n };
        // Every label vector that is wrong wherever the model is wrong.
        for mask in 0u32..(1 << model_correct) {
            let acc = u64::from(mask.count_ones());
            accs.push(acc);
            if acc == u64::from(self.n) {
                self.strategies += 1;
                let i = self.table.index(accs);
                if !self.le[i] {
                    self.failure = Some(format!("manipulation {accs:?} beats honest play"));
                }
                let pure = r > self.r_star
                    && accs[..self.r_star - 1] == self.prefix[..]
                    && accs[self.r_star - 1..r - 1].iter().all(|&a| a < u64::from(self.n));
                if pure {
                    self.stalls += 1;
                    if !self.stall_ok[i] {
                        self.failure = Some(format!("stall {accs:?} is not the halved reward"));
                    }
                }
            } else {
                self.walk(accs);
            }
            accs.pop();
        }
    }
}

fn criterion_halving() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let c = ratio(2, 1);
    for k in 0..HALVING_SEQUENCES {
        let len = rng.gen_range(2..=8);
        let mut accs: Vec<u64> = (0..len).map(|_| rng.gen_range(0..=20)).collect();
        if accs[0] == 0 {
            accs[0] = rng.gen_range(1..=20);
        }
        let rho_1 = Money::new(rng.gen_range(1..=50), rng.gen_range(1..=7));
        let rewards = common::protocol_rewards(&rho_1, &c, &accs);
        let mut bid = rho_1.clone();
        for r in 2..=len {
            bid = next_bid(&bid, &accs[..r], &c).map_err(|e| format!("sequence {k}: {e}"))?;
            let pure = bid.scale(&BigRational::from_integer(accs[..r].iter().sum::<u64>().into()));
            if rewards[r - 1] != pure {
                return Err(format!("sequence {k} round {r}: protocol {} vs recurrence {pure}", rewards[r - 1]));
            }
            if rewards[r - 1].as_ratio() * ratio(2, 1) != *rewards[r - 2].as_ratio() {
                return Err(format!("sequence {k} {accs:?}: round {r} reward {} is not half of {}", rewards[r - 1], rewards[r - 2]));
            }
        }
    }
    Ok(format!("{HALVING_SEQUENCES} sequences, every round exactly half the previous"))
}

fn criterion_dsic() -> Outcome {
    let grid = rational_grid(DSIC_GRID, DSIC_DENOM);
    let report = check_grid(&PriceRule::MinOfReports, GatewayUtility::Payment, &grid);
    let surplus = check_grid(&PriceRule::MinOfReports, GatewayUtility::Surplus, &grid);
    let msg = format!(
        "{} triples: server violations {}, gateway violations {} (payment utility), {} (surplus utility)",
        report.triples, report.server_violations, report.gateway_violations, surplus.gateway_violations
    );
    if report.total_violations() == 0 {
        Ok(msg)
    } else {
        let first = report
            .first_gateway_violation
            .or(report.first_server_violation)
            .map(|v| format!("v_S={} v_G={} report={} utility {} > {}", v.v_s, v.v_g, v.misreport, v.misreport_utility, v.truthful_utility))
            .unwrap_or_default();
        Err(format!("{msg}; first: {first}"))
    }
}

fn criterion_golden() -> Outcome {
    let cfg = bundled("honest").unwrap();
    let sim = simulate(&cfg).map_err(|e| e.to_string())?;
    let report = sim.report();
    let again = simulate(&cfg).map_err(|e| e.to_string())?;
    if report.to_json() != again.report().to_json() || sim.events_jsonl() != again.events_jsonl() {
        return Err("two runs with the same seed differ".into());
    }
    let session = report.sessions.last().ok_or("no session")?;
    let agreement = session.agreement.as_ref().ok_or("no agreement")?;
    let outcome = sim.server.as_ref().ok_or("server did not finish")?;
    let delta = outcome.delta.clone().ok_or("no Δ")?;
    let bound = &delta / BigRational::from_integer(agreement.gamma_service.into());
    let checks = [
        (agreement.epsilon < bound, format!("ε = {} not below Δ/Γ = {bound}", agreement.epsilon)),
        (report.learning == Some(LearningStatus::Accepted), format!("learning {:?}", report.learning)),
        (report.learning_rounds == Some(1), format!("accepted after {:?} rounds", report.learning_rounds)),
        (report.filter_deployed, "filter not deployed".into()),
        (report.outcome == Some(ServerRunStatus::ServiceComplete), format!("outcome {:?}", report.outcome)),
        (
            report.attack_packets_in_service.is_some_and(|n| n <= GOLDEN_MAX_ATTACK_PACKETS),
            format!("{:?} attack packets during service", report.attack_packets_in_service),
        ),
        (report.installments_paid == agreement.iota, format!("{} of {} fees paid", report.installments_paid, agreement.iota)),
        (report.breaches.is_empty(), "breach logged".into()),
    ];
    if let Some((_, why)) = checks.iter().find(|(ok, _)| !ok) {
        return Err(why.clone());
    }
    Ok(format!(
        "accepted in round 1, {} attack packet(s) in service, {}/{} fees, deterministic",
        report.attack_packets_in_service.unwrap_or(0),
        report.installments_paid,
        agreement.iota
    ))
}

fn criterion_defection() -> Outcome {
    // Non-deploying gateway.
    let sim = simulate(&bundled("defecting-gateway").unwrap()).map_err(|e| e.to_string())?;
    let report = sim.report();
    let breach = report.breaches.first().ok_or("no breach")?;
    if (breach.party, breach.installment, breach.reason) != (Party::Server, 1, BreachReason::FilterIneffective) {
        return Err(format!("unexpected breach {breach:?}"));
    }
    let proto = sim.protocol.borrow();
    let log_s = proto.log_of(breach.session, Party::Server).ok_or("no server log")?;
    let alarmed = log_s.entries().iter().any(|e| match &e.event {
        LogEvent::InstallmentObserved { installment: 1, mean_interval: Some(m), threshold, .. } => m < threshold,
        _ => false,
    });
    if !alarmed {
        return Err("installment 1 did not observe Δ′ < Δ/ε".into());
    }
    let verdict = proto.verdict(breach.session).ok_or("no verdict")?;
    let refund = verdict.receipt.and_then(|i| proto.ledger.receipts().get(i as usize)).ok_or("refund not executed")?;
    let reward = proto.ledger.find(breach.session, Purpose::Reward).ok_or("no reward receipt")?;
    if (verdict.guilty, verdict.remedy) != (Guilty::Gateway, Remedy::RefundToServer)
        || refund.purpose != Purpose::Refund
        || refund.amount != reward.amount
    {
        return Err(format!("verdict {:?}/{:?}, refund {}", verdict.guilty, verdict.remedy, refund.amount));
    }
    let refunded = refund.amount.to_string();
    drop(proto);

    // Lying server.
    let lying = simulate(&bundled("lying-server").unwrap()).map_err(|e| e.to_string())?.report();
    if lying.learning != Some(LearningStatus::AbortServerLied) || lying.filter_deployed || !lying.reward_paid.is_zero() {
        return Err(format!("lying server: learning {:?}, deployed {}", lying.learning, lying.filter_deployed));
    }

    // Spoofing attacker outside the gateway's range.
    let spoof = simulate(&bundled("spoofing-attacker").unwrap()).map_err(|e| e.to_string())?.report();
    let skipped = spoof.spoof_checks.iter().all(|(_, s)| *s) && !spoof.spoof_checks.is_empty() && spoof.sessions.is_empty();
    if !skipped || spoof.outcome != Some(ServerRunStatus::NoGateway) {
        return Err(format!("spoofing attacker: checks {:?}, outcome {:?}", spoof.spoof_checks, spoof.outcome));
    }
    Ok(format!(
        "non-deploying: breach in installment 1, refund {}; lying server: ABORT_SERVER_LIED; spoofing: gateway skipped",
        refunded
    ))
}

fn criterion_discovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut with_gateways = 0;
    for k in 0..DISCOVERY_TOPOLOGIES {
        let (topology, source) = common::random_tree(&mut rng, DISCOVERY_MAX_NODES);
        let expected = common::discovery_oracle(&topology, remotegate::model::Address(0), source);
        let found = common::run_discovery(&topology, source, 2 * DISCOVERY_MAX_NODES);
        let got: Vec<_> = found.list.entries().iter().map(|g| (g.gateway, g.latency)).collect();
        if got != expected {
            return Err(format!("topology {k}: discovered {got:?}, oracle {expected:?}"));
        }
        let farthest: Vec<_> = found.list.farthest_first().map(|g| g.gateway).collect();
        let reversed: Vec<_> = expected.iter().rev().map(|(g, _)| *g).collect();
        if farthest != reversed {
            return Err(format!("topology {k}: engagement order {farthest:?}"));
        }
        with_gateways += usize::from(!expected.is_empty());
    }
    Ok(format!("{DISCOVERY_TOPOLOGIES} random trees ({with_gateways} with covering gateways) match the path oracle"))
}

fn criterion_audit() -> Outcome {
    let mut runs = 0;
    for (name, _) in BUNDLED {
        let base = bundled(name).unwrap();
        for s in 0..AUDIT_SEEDS {
            let mut cfg = base.clone();
            cfg.seed = base.seed + s;
            let sim = simulate(&cfg).map_err(|e| e.to_string())?;
            let audit = sim.audit();
            if let Some(f) = audit.failures().next() {
                return Err(format!("{name} seed {}: {} ({})", cfg.seed, f.name, f.detail));
            }
            runs += 1;
        }
    }
    Ok(format!("{runs} runs audited clean"))
}

fn criterion_commitments() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut digests = HashSet::new();
    for k in 0..COMMITMENT_PAIRS {
        let mut value = vec![0u8; rng.gen_range(0..48)];
        rng.fill_bytes(&mut value);
        let nonce = Nonce::random(&mut rng);
        let c = commit(&value, &nonce);
        if !digests.insert(*c.digest()) {
            return Err(format!("digest collision at pair {k}"));
        }
        let mut other_value = value.clone();
        match other_value.first_mut() {
            Some(b) => *b ^= 1 << rng.gen_range(0..8),
            None => other_value.push(0),
        }
        let mut other_nonce = nonce;
        other_nonce.0[rng.gen_range(0..other_nonce.0.len())] ^= 1 << rng.gen_range(0..8);
        let cases = [
            (open(&c, &value, &nonce), true),
            (open(&c, &other_value, &nonce), false),
            (open(&c, &value, &other_nonce), false),
            (open(&c, &other_value, &other_nonce), false),
        ];
        if cases.iter().any(|(got, want)| got != want) {
            return Err(format!("pair {k}: open results {:?}", cases.map(|c| c.0)));
        }
    }
    Ok(format!("{COMMITMENT_PAIRS} pairs bind and open correctly, no collisions"))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 stalling and label manipulation never pay", criterion_stalling),
        ("2 reward halves every round with c = 2", criterion_halving),
        ("3 truthful reports dominate under the min rule", criterion_dsic),
        ("4 honest golden run", criterion_golden),
        ("5 defection scenarios", criterion_defection),
        ("6 discovery ordering", criterion_discovery),
        ("7 ledger and log invariants", criterion_audit),
        ("8 commitment binding and hiding", criterion_commitments),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let result = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("\n{} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
