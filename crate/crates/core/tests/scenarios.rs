use std::process::Command;

use remotegate::learning::LearningStatus;
use remotegate::lifecycle::{BreachReason, Guilty, Party, Remedy, ServerRunStatus, SessionEnd};
use remotegate::mechanism::Money;
use remotegate::scenario::{bundled, run_scenario, simulate, ScenarioConfig, BUNDLED};

fn report(name: &str) -> remotegate::scenario::RunReport {
    run_scenario(&bundled(name).unwrap()).unwrap()
}

#[test]
fn honest_run_completes_service() {
    let r = report("honest");
    assert_eq!(r.outcome, Some(ServerRunStatus::ServiceComplete));
    assert_eq!(r.learning, Some(LearningStatus::Accepted));
    assert_eq!(r.run, "completed");
    assert!(r.verdicts.is_empty());
    assert_eq!(r.fees_paid, Money::from_integer(20));
    // ρ₁ = v_G = 5/2 and 8 correct test labels.
    assert_eq!(r.reward_paid, Money::from_integer(20));
    let t = &r.timeline;
    assert_eq!(r.total_time, Some(t.t_deployed.unwrap() - t.t_detect.unwrap()));
    assert!(t.is_ordered());
}

#[test]
fn stalling_gateway_is_paid_less() {
    let honest = report("honest");
    let r = report("stalling-gateway");
    assert_eq!(r.learning, Some(LearningStatus::Accepted));
    assert_eq!(r.learning_rounds, Some(3));
    // Two stalled rounds: the round-1 reward halves twice.
    let first = r.rounds.first().unwrap().reward_total.clone();
    assert_eq!(r.reward_paid, first.scale(&num_rational::BigRational::new(1.into(), 4.into())));
    assert!(r.reward_paid < honest.reward_paid);
}

#[test]
fn relocated_attacker_does_not_blame_gateway() {
    let r = report("relocating-attacker");
    assert_eq!(r.outcome, Some(ServerRunStatus::ServiceComplete));
    assert!(r.breaches.is_empty());
    assert_eq!(r.installments_paid, 4);
    assert!(r.attack_packets_in_service.unwrap() > 1);
}

#[test]
fn expensive_gateway_is_passed_over() {
    let r = report("two-gateways");
    assert_eq!(r.outcome, Some(ServerRunStatus::ServiceComplete));
    assert_eq!(r.sessions.len(), 2);
    assert_eq!(r.sessions[0].gateway.0, 7);
    assert_eq!(r.sessions[0].end, SessionEnd::TermsRejected);
    assert_eq!(r.sessions[1].gateway.0, 2);
    assert_eq!(r.sessions[1].end, SessionEnd::Completed);
}

#[test]
fn missing_fee_blames_server() {
    let r = report("missing-fee");
    assert_eq!(r.outcome, Some(ServerRunStatus::Terminated));
    let b = &r.breaches[0];
    assert_eq!((b.party, b.installment, b.reason), (Party::Gateway, 2, BreachReason::FeeMissing));
    let v = &r.verdicts[0];
    assert_eq!((v.guilty, v.remedy), (Guilty::Server, Remedy::PayGateway));
    assert_eq!(r.arbitration_payments, Money::from_integer(5));
}

#[test]
fn defecting_gateway_is_refunded() {
    let r = report("defecting-gateway");
    assert_eq!(r.outcome, Some(ServerRunStatus::Exhausted));
    assert!(!r.filter_deployed);
    assert_eq!(r.refunds, r.reward_paid);
    let server = r.balances.iter().find(|(a, _)| a.0 == 0).unwrap();
    assert_eq!(server.1, Money::from_integer(10_000));
}

#[test]
fn reports_are_deterministic_per_seed() {
    for (name, _) in BUNDLED {
        let cfg = bundled(name).unwrap();
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a.report().to_json(), b.report().to_json(), "{name}");
        assert_eq!(a.events_jsonl(), b.events_jsonl(), "{name}");
    }
}

#[test]
fn event_log_lines_parse() {
    let sim = simulate(&bundled("missing-fee").unwrap()).unwrap();
    let text = sim.events_jsonl();
    assert_eq!(text.lines().count(), sim.report().event_count);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["step", "actor", "event", "digest"] {
            assert!(v.get(key).is_some(), "{key} missing in {line}");
        }
    }
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = bundled("two-gateways").unwrap();
    let again = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(run_scenario(&cfg).unwrap(), run_scenario(&again).unwrap());
}

#[test]
fn unknown_fields_are_rejected() {
    let text = include_str!("../scenarios/honest.toml").replace("horizon = 6000", "horizon = 6000\nhorizn = 1");
    assert!(ScenarioConfig::from_toml(&text).is_err());
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_remotegate"))
}

#[test]
fn cli_writes_report_and_events() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli()
        .args(["honest", "--report-format", "json", "--seed", "11", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 11);
    assert!(dir.path().join("events.jsonl").exists());
}

#[test]
fn cli_repeat_uses_consecutive_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli().args(["lying-server", "--repeat", "2", "--out"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("seed-7/report.txt").exists());
    assert!(dir.path().join("seed-8/report.txt").exists());
}

#[test]
fn cli_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = include_str!("../scenarios/honest.toml").replace("a = 2\nb = 4\n", "a = 2\nb = 40\n");
    std::fs::write(&path, text).unwrap();
    let out = cli().arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("links[3]") && err.contains("40"), "{err}");

    let out = cli().arg("no-such-scenario").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cli_lists_bundled_scenarios() {
    let out = cli().arg("--list").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for (name, _) in BUNDLED {
        assert!(text.contains(name));
    }
}
