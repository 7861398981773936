use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hid_core::bench::{run_reduction_benchmark, write_samples_csv, ReductionReport};
use hid_core::cascade::AuditTolerances;
use hid_core::controllers::{
    nominal_stance, BalanceController, Controller, SingleSupportController, TrackingController,
};
use hid_core::model::RobotModel;
use hid_core::sim::{audit_log, foot_polygons, run_episode, EpisodeLog, EpisodeSummary, LogFlag};
use nalgebra::Vector3;
use serde::Serialize;

use crate::config::{ControllerKind, ExperimentConfig};

/// One pass/fail check of a run.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit,
            passed: value <= limit,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub model: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub episode: EpisodeSummary,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchSummary {
    pub model: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub report: ReductionReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditSummary {
    pub log: PathBuf,
    pub cycles: usize,
    pub flagged_cycles: Vec<usize>,
    pub flags: Vec<LogFlag>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn prepare(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

/// Runs a closed-loop episode and writes `<scenario>.csv`,
/// `<scenario>_summary.json` and the resolved `<scenario>_config.json`.
pub fn run_scenario(kind: ControllerKind, config: &ExperimentConfig) -> Result<RunSummary> {
    let model = config.load_model()?;
    let initial = nominal_stance(&model);
    let cc = config.controller_config.clone();
    let mut controller: Box<dyn Controller> = match kind {
        ControllerKind::Balance => Box::new(BalanceController::new(&model, &initial, cc)?),
        ControllerKind::Tracking => Box::new(TrackingController::new(
            &model,
            &initial,
            cc,
            Vector3::from(config.tracking.amplitude),
            config.tracking.frequency,
        )?),
        ControllerKind::SingleSupport => Box::new(SingleSupportController::new(
            &model,
            &initial,
            cc,
            config.single_support.swing,
        )?),
        ControllerKind::SteppingBench => unreachable!("the benchmark is not an episode"),
    };
    let log = run_episode(controller.as_mut(), &model, &initial, &config.sim, &config.disturbances)?;
    let polygons = foot_polygons(&config.controller_config, log.feet.len(), 0.0)?;
    let criteria = &config.criteria;
    let episode = log.summary(&polygons, criteria.recovery_tolerance);

    let mut checks = vec![
        Check::at_most("failed", episode.failed as u8 as f64, 0.0),
        Check::at_most("audit_flagged_cycles", episode.audit_flagged_cycles as f64, 0.0),
        Check::at_most("max_cop_excursion", episode.max_cop_excursion, 0.0),
    ];
    match kind {
        ControllerKind::Balance if !config.disturbances.is_empty() => {
            checks.push(Check::at_most(
                "recovery_time",
                episode.recovery_time.unwrap_or(f64::INFINITY),
                criteria.recovery_window,
            ));
        }
        ControllerKind::Tracking => checks.push(Check::at_most("com_rmse", episode.com_rmse, criteria.max_com_rmse)),
        ControllerKind::SingleSupport => {
            checks.push(Check::at_most("missing_phases", 3.0 - episode.phases.len() as f64, 0.0))
        }
        _ => {}
    }

    let summary = RunSummary {
        scenario: kind.as_str().into(),
        model: config.model.clone(),
        passed: checks.iter().all(|c| c.passed),
        checks,
        episode,
    };
    let dir = &config.output_dir;
    prepare(dir)?;
    let name = kind.as_str();
    let csv = dir.join(format!("{name}.csv"));
    log.write_csv(BufWriter::new(File::create(&csv).with_context(|| format!("creating {}", csv.display()))?))?;
    write_json(&dir.join(format!("{name}_summary.json")), &summary)?;
    write_json(&dir.join(format!("{name}_config.json")), config)?;
    Ok(summary)
}

/// Times the full and reduced stepping hierarchy and writes
/// `bench_reduction.csv` and `bench_reduction_summary.json`.
pub fn bench_reduction(config: &ExperimentConfig, model: &RobotModel) -> Result<BenchSummary> {
    let report = run_reduction_benchmark(model, &config.controller_config, &config.bench)?;
    let criteria = &config.criteria;
    let checks = vec![
        Check::at_most("worst_ratio", report.worst_ratio, criteria.max_worst_ratio),
        Check::at_most("max_torque_difference", report.max_torque_difference, criteria.max_torque_difference),
    ];
    let dir = &config.output_dir;
    prepare(dir)?;
    let csv = dir.join("bench_reduction.csv");
    write_samples_csv(
        &report.samples,
        BufWriter::new(File::create(&csv).with_context(|| format!("creating {}", csv.display()))?),
    )?;
    let summary = BenchSummary {
        model: config.model.clone(),
        passed: checks.iter().all(|c| c.passed),
        checks,
        report,
    };
    write_json(&dir.join("bench_reduction_summary.json"), &summary)?;
    Ok(summary)
}

/// Re-checks a logged episode and writes `audit.json`.
pub fn audit(config: &ExperimentConfig, log_path: &Path, controller: &str) -> Result<AuditSummary> {
    let model = config.load_model()?;
    let file = File::open(log_path).with_context(|| format!("opening log {}", log_path.display()))?;
    let log = EpisodeLog::read_csv(file, controller, config.sim.dt)?;
    let flags = audit_log(&log, &model, &config.controller_config, &AuditTolerances::default())?;
    let mut flagged_cycles: Vec<usize> = flags.iter().map(LogFlag::cycle).collect();
    flagged_cycles.dedup();
    let summary = AuditSummary {
        log: log_path.to_path_buf(),
        cycles: log.records.len(),
        flagged_cycles,
        flags,
    };
    prepare(&config.output_dir)?;
    write_json(&config.output_dir.join("audit.json"), &summary)?;
    Ok(summary)
}
