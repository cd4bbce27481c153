use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use remotegate::scenario::{bundled, simulate, ScenarioConfig, BUNDLED};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

/// Run a gateway-negotiation scenario and report the outcome.
#[derive(Debug, Parser)]
#[command(name = "remotegate", version)]
struct Cli {
    /// Scenario TOML file, or the name of a bundled scenario.
    #[arg(required_unless_present = "list")]
    scenario: Option<String>,

    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Directory for the report and the event log.
    #[arg(long)]
    out: Option<PathBuf>,

    #[arg(long, default_value = "warn")]
    log_level: log::LevelFilter,

    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    report_format: ReportFormat,

    /// Run this many times with consecutive seeds.
    #[arg(long, default_value_t = 1)]
    repeat: u64,

    /// List bundled scenarios and exit.
    #[arg(long)]
    list: bool,
}

fn load(spec: &str) -> Result<ScenarioConfig, String> {
    let path = Path::new(spec);
    if path.exists() {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        return ScenarioConfig::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()));
    }
    bundled(spec).ok_or_else(|| format!("{spec}: no such file or bundled scenario"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).init();

    if cli.list {
        for (name, _) in BUNDLED {
            let cfg = bundled(name).expect("bundled scenarios are valid");
            println!("{name:<22} {}", cfg.description);
        }
        return ExitCode::SUCCESS;
    }

    let mut config = match load(cli.scenario.as_deref().expect("required by clap")) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let base_seed = cli.seed.unwrap_or(config.seed);

    for i in 0..cli.repeat.max(1) {
        config.seed = base_seed.wrapping_add(i);
        let sim = match simulate(&config) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        };
        let report = sim.report();
        let rendered = match cli.report_format {
            ReportFormat::Text => report.to_text(),
            ReportFormat::Json => report.to_json(),
        };
        match &cli.out {
            Some(dir) => {
                let dir = if cli.repeat > 1 { dir.join(format!("seed-{}", config.seed)) } else { dir.clone() };
                let ext = match cli.report_format {
                    ReportFormat::Text => "txt",
                    ReportFormat::Json => "json",
                };
                let written = fs::create_dir_all(&dir)
                    .and_then(|_| fs::write(dir.join(format!("report.{ext}")), &rendered))
                    .and_then(|_| fs::write(dir.join("events.jsonl"), sim.events_jsonl()));
                if let Err(e) = written {
                    eprintln!("error: {}: {e}", dir.display());
                    return ExitCode::FAILURE;
                }
                println!(
                    "seed {}: {:?}, audit {}, written to {}",
                    config.seed,
                    report.outcome,
                    if report.audit.passed() { "pass" } else { "FAIL" },
                    dir.display()
                );
            }
            None => {
                if writeln!(std::io::stdout().lock(), "{rendered}").is_err() {
                    return ExitCode::SUCCESS;
                }
            }
        }
    }
    ExitCode::SUCCESS
}
