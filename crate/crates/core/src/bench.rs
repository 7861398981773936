//! Solve-time comparison of the full and the reduced formulation on the
//! stepping hierarchy.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cascade::{solve_hierarchy, CascadeOptions, ExecutionMode, Hierarchy};
use crate::controllers::{
    nominal_stance, stepping_benchmark_hierarchy, ControllerConfig, ControllerError, SupportPattern,
};
use crate::model::{RobotModel, RobotState};
use crate::sim::TimingStats;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub cycles: usize,
    /// Solves per cycle and formulation; the fastest one is kept so that
    /// preemption does not masquerade as solver cost.
    pub repeats: usize,
    /// Joint excursion of the benchmark trajectory, rad.
    pub amplitude: f64,
    /// Cycles spent in each support pattern before switching.
    pub pattern_cycles: usize,
    pub dt: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            cycles: 10_000,
            repeats: 3,
            amplitude: 0.05,
            pattern_cycles: 500,
            dt: 0.001,
        }
    }
}

impl BenchConfig {
    pub fn check(&self) -> Result<(), ControllerError> {
        if self.cycles == 0 || self.repeats == 0 || self.pattern_cycles == 0 || !(self.dt > 0.0) {
            return Err(ControllerError::Configuration(
                "benchmark cycles, repeats, pattern length and dt must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Deterministic state and support pattern of benchmark cycle `k`: every
/// joint oscillates about the nominal stance at its own frequency while the
/// support alternates double, left swing, double, right swing.
pub fn benchmark_state(base: &RobotState, k: usize, config: &BenchConfig) -> (RobotState, SupportPattern) {
    let mut state = base.clone();
    let t = k as f64 * config.dt;
    for j in 0..state.joints.len() {
        let omega = 1.0 + 0.1 * j as f64;
        state.joints[j] += config.amplitude * (omega * t).sin();
        state.velocity[j] = config.amplitude * omega * (omega * t).cos();
    }
    let block = k / config.pattern_cycles;
    let support = if block % 2 == 0 {
        SupportPattern::Double
    } else {
        SupportPattern::Single { swing: (block / 2) % 2 }
    };
    (state, support)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionSample {
    pub cycle: usize,
    pub support: String,
    /// µs
    pub full: f64,
    /// µs
    pub reduced: f64,
    pub torque_difference: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionReport {
    pub dof: usize,
    pub full_variables: usize,
    pub reduced_variables: usize,
    pub full_equality_rows: usize,
    pub reduced_equality_rows: usize,
    pub full: TimingStats,
    pub reduced: TimingStats,
    /// Reduced over full worst-case time.
    pub worst_ratio: f64,
    pub median_ratio: f64,
    pub p99_ratio: f64,
    /// Largest relative torque mismatch between the formulations.
    pub max_torque_difference: f64,
    #[serde(skip)]
    pub samples: Vec<ReductionSample>,
}

fn timed(hierarchy: &Hierarchy, options: &CascadeOptions) -> Result<(f64, nalgebra::DVector<f64>), ControllerError> {
    let start = Instant::now();
    let solution = solve_hierarchy(hierarchy, options)?;
    let elapsed = start.elapsed().as_secs_f64() * 1e6;
    let torques = solution
        .torques
        .ok_or_else(|| ControllerError::Configuration("hierarchy carries no torque map".into()))?;
    Ok((elapsed, torques))
}

/// Times both formulations over `bench.cycles` cycles on one thread. Only
/// the cascade solve is inside the clock.
pub fn run_reduction_benchmark(
    model: &RobotModel,
    config: &ControllerConfig,
    bench: &BenchConfig,
) -> Result<ReductionReport, ControllerError> {
    bench.check()?;
    let options = CascadeOptions {
        mode: ExecutionMode::Sequential,
        ..CascadeOptions::default()
    };
    let base = nominal_stance(model);
    let (full0, reduced0) = stepping_benchmark_hierarchy(model, &base, config, SupportPattern::Double)?;
    let mut samples = Vec::with_capacity(bench.cycles);
    for k in 0..bench.cycles {
        let (state, support) = benchmark_state(&base, k, bench);
        let (full, reduced) = stepping_benchmark_hierarchy(model, &state, config, support)?;
        let (mut tf, mut tr) = (f64::INFINITY, f64::INFINITY);
        let mut difference = 0.0;
        for _ in 0..bench.repeats {
            let (a, ta) = timed(&full, &options)?;
            let (b, tb) = timed(&reduced, &options)?;
            tf = tf.min(a);
            tr = tr.min(b);
            difference = (&ta - &tb).norm() / (1.0 + ta.norm());
        }
        samples.push(ReductionSample {
            cycle: k,
            support: match support {
                SupportPattern::Double => "double".into(),
                SupportPattern::Single { swing } => format!("single_{swing}"),
            },
            full: tf,
            reduced: tr,
            torque_difference: difference,
        });
    }
    let full = TimingStats::from_samples(&samples.iter().map(|s| s.full).collect::<Vec<_>>());
    let reduced = TimingStats::from_samples(&samples.iter().map(|s| s.reduced).collect::<Vec<_>>());
    Ok(ReductionReport {
        dof: model.dof(),
        full_variables: full0.layout.dim(),
        reduced_variables: reduced0.layout.dim(),
        full_equality_rows: full0.levels[0].eq_rows(),
        reduced_equality_rows: reduced0.levels[0].eq_rows(),
        worst_ratio: reduced.max / full.max,
        median_ratio: reduced.median / full.median,
        p99_ratio: reduced.p99 / full.p99,
        max_torque_difference: samples.iter().map(|s| s.torque_difference).fold(0.0, f64::max),
        full,
        reduced,
        samples,
    })
}

/// Per-cycle timing CSV with a fixed header.
pub fn write_samples_csv<W: std::io::Write>(samples: &[ReductionSample], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["cycle", "support", "full_us", "reduced_us", "torque_difference"])?;
    for s in samples {
        w.write_record([
            s.cycle.to_string(),
            s.support.clone(),
            format!("{:.3}", s.full),
            format!("{:.3}", s.reduced),
            format!("{:e}", s.torque_difference),
        ])?;
    }
    w.flush()?;
    Ok(())
}
