use std::path::{Path, PathBuf};
use std::process::ExitCode;

use attest_core::trust::{PaymentSchedule, PaymentVariant};
use attest_sim::config::{self, ScenarioConfig};
use attest_sim::report;
use attest_sim::runner::{self, RunError};
use attest_sim::sweep;
use attest_sim::verify;
use clap::{Parser, Subcommand};

const EXIT_INVALID: u8 = 1;
const EXIT_VERIFY: u8 = 2;

#[derive(Parser)]
#[command(name = "attest", version, about = "Simulate and verify reputation-weighted design attestation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trace and reports.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_variant)]
        payment_variant: Option<PaymentVariant>,
    },
    /// Replay a trace and recompute every result.
    VerifyTrace { path: PathBuf },
    /// Run a scenario under consecutive seeds starting at its own seed.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_variant)]
        payment_variant: Option<PaymentVariant>,
    },
}

fn parse_variant(s: &str) -> Result<PaymentVariant, String> {
    s.parse().map_err(|_| format!("expected simplified or derivation, got {s:?}"))
}

fn load(path: &Path, seed: Option<u64>, variant: Option<PaymentVariant>) -> Result<ScenarioConfig, ExitCode> {
    let mut cfg = config::load_config(path).map_err(|e| {
        eprintln!("{}: {e}", path.display());
        ExitCode::from(EXIT_INVALID)
    })?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(v) = variant {
        let c = &cfg.constants;
        if let Err(e) = PaymentSchedule::new(c.effort_cost, c.quality_threshold, c.epsilon, v) {
            eprintln!("{}: payment variant {v}: {e}", path.display());
            return Err(ExitCode::from(EXIT_INVALID));
        }
        cfg.constants.payment_variant = v;
    }
    Ok(cfg)
}

fn run_failed(err: RunError, out: &Path) -> ExitCode {
    eprintln!("run failed: {err}");
    match err {
        RunError::Internal { trace, .. } => {
            let dump = out.join("trace.failed.jsonl");
            if std::fs::create_dir_all(out).is_ok() && report::write_trace(&trace, &dump).is_ok() {
                eprintln!("trace dump written to {}", dump.display());
            }
            ExitCode::from(EXIT_VERIFY)
        }
        RunError::Agent(_) => ExitCode::from(EXIT_INVALID),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { scenario, seed, out, payment_variant } => {
            let cfg = match load(&scenario, seed, payment_variant) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let mut rep = match runner::run(&cfg) {
                Ok(r) => r,
                Err(e) => return run_failed(e, &out),
            };
            if let Err(e) = report::write_outputs(&mut rep, &out) {
                eprintln!("{e}");
                return ExitCode::from(EXIT_INVALID);
            }
            for d in &rep.designs {
                let fs = |p: &Option<runner::PhaseReport>| p.as_ref().map_or("-".to_string(), |p| format!("{:.6}", p.final_score));
                println!("design {}: FS_e {} FS_f {} -> {:?}", d.index, fs(&d.evaluation), fs(&d.feedback), d.final_state);
            }
            println!("wrote {}", out.display());
            ExitCode::SUCCESS
        }
        Command::VerifyTrace { path } => match verify::verify_trace(&path) {
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(EXIT_INVALID)
            }
            Ok(v) => match &v.divergence {
                None => {
                    println!(
                        "PASS {}: {} messages, {} events, {} results recomputed",
                        path.display(),
                        v.messages,
                        v.events,
                        v.results_checked
                    );
                    ExitCode::SUCCESS
                }
                Some(d) => {
                    println!("FAIL {}: {d}", path.display());
                    ExitCode::from(EXIT_VERIFY)
                }
            },
        },
        Command::Sweep { scenario, seeds, out, payment_variant } => {
            let cfg = match load(&scenario, None, payment_variant) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let rep = match sweep::sweep(&cfg, seeds) {
                Ok(r) => r,
                Err(e) => return run_failed(e, &out),
            };
            if let Err(e) = sweep::write_sweep(&rep, &out) {
                eprintln!("{e}");
                return ExitCode::from(EXIT_INVALID);
            }
            for s in &rep.strategies {
                let mean = s.mean_utility_by_seed.iter().sum::<f64>() / s.mean_utility_by_seed.len().max(1) as f64;
                println!(
                    "{:<16} mean utility {:+.6}  positive in {}/{} seeds",
                    s.strategy,
                    mean,
                    s.seeds_positive,
                    s.mean_utility_by_seed.len()
                );
            }
            println!("wrote {}", out.display());
            ExitCode::SUCCESS
        }
    }
}
