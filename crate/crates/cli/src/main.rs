//! `hid`: runs the balance, tracking and single-support scenarios, the
//! formulation timing benchmark, and audits of recorded episodes.
//!
//! Exit codes: 0 success, 1 a run finished but failed its criteria (or
//! failed at run time), 2 invalid configuration or usage.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{load, ControllerKind, ExperimentConfig};

#[derive(Parser)]
#[command(name = "hid", version, about = "Hierarchical inverse dynamics experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration; every key is optional.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set sim.duration=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; wins over the config and HID_OUTPUT_DIR.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Double-support balancing, optionally under disturbances.
    RunBalance(Common),
    /// CoM sine tracking in double support.
    RunTracking(Common),
    /// Weight shift, unloading and lift of one foot.
    RunSingleSupport(Common),
    /// Full versus reduced formulation solve times on the stepping hierarchy.
    BenchReduction(Common),
    /// Re-check a logged episode against the controller invariants.
    Audit {
        #[command(flatten)]
        common: Common,
        /// Episode CSV written by one of the run commands.
        #[arg(long)]
        log: PathBuf,
        /// Controller name recorded with the log.
        #[arg(long, default_value = "episode")]
        controller: String,
    },
}

enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
    Criteria,
}

fn configure(common: &Common, kind: Option<ControllerKind>) -> Result<ExperimentConfig, Failure> {
    let mut loaded = load(common.config.as_deref(), &common.overrides).map_err(Failure::Config)?;
    if kind == Some(ControllerKind::SteppingBench) && loaded.defaulted.iter().any(|k| k == "model") {
        loaded.config.model = "builtin:humanoid25".into();
    }
    if !loaded.defaulted.is_empty() {
        eprintln!("using defaults for: {}", loaded.defaulted.join(", "));
    }
    let mut config = loaded.config;
    if let Some(dir) = &common.output {
        config.output_dir = dir.clone();
    }
    if let Some(kind) = kind {
        config.check(kind).map_err(Failure::Config)?;
    }
    Ok(config)
}

fn verdict(passed: bool) -> Result<(), Failure> {
    if passed {
        Ok(())
    } else {
        Err(Failure::Criteria)
    }
}

fn scenario(common: &Common, kind: ControllerKind) -> Result<(), Failure> {
    let config = configure(common, Some(kind))?;
    config.load_model().map_err(Failure::Config)?;
    let summary = run::run_scenario(kind, &config).map_err(Failure::Run)?;
    for c in &summary.checks {
        println!("{:<24} {:>12.6e} limit {:>12.6e} {}", c.name, c.value, c.limit, if c.passed { "ok" } else { "FAIL" });
    }
    println!("outputs in {}", config.output_dir.display());
    verdict(summary.passed)
}

fn execute(command: &Command) -> Result<(), Failure> {
    match command {
        Command::RunBalance(c) => scenario(c, ControllerKind::Balance),
        Command::RunTracking(c) => scenario(c, ControllerKind::Tracking),
        Command::RunSingleSupport(c) => scenario(c, ControllerKind::SingleSupport),
        Command::BenchReduction(c) => {
            let config = configure(c, Some(ControllerKind::SteppingBench))?;
            let model = config.load_model().map_err(Failure::Config)?;
            let s = run::bench_reduction(&config, &model).map_err(Failure::Run)?;
            let r = &s.report;
            println!(
                "variables full {} reduced {}; level-1 equality rows full {} reduced {}",
                r.full_variables, r.reduced_variables, r.full_equality_rows, r.reduced_equality_rows
            );
            for (name, t) in [("full", &r.full), ("reduced", &r.reduced)] {
                println!(
                    "{name:<8} min {:>9.1} median {:>9.1} p99 {:>9.1} max {:>9.1} µs over {} cycles",
                    t.min, t.median, t.p99, t.max, t.samples
                );
            }
            println!(
                "ratios worst {:.3} median {:.3} p99 {:.3}; torque mismatch {:.2e}",
                r.worst_ratio, r.median_ratio, r.p99_ratio, r.max_torque_difference
            );
            verdict(s.passed)
        }
        Command::Audit { common, log, controller } => {
            let config = configure(common, None)?;
            config.load_model().map_err(Failure::Config)?;
            let s = run::audit(&config, log, controller).map_err(Failure::Run)?;
            println!("{} cycles, {} flags", s.cycles, s.flags.len());
            if !s.flagged_cycles.is_empty() {
                let shown: Vec<String> = s.flagged_cycles.iter().take(20).map(|c| c.to_string()).collect();
                println!("flagged cycles: {}", shown.join(" "));
            }
            verdict(s.flags.is_empty())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Criteria) => ExitCode::from(1),
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
    }
}
