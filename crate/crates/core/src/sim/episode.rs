use std::io::{Read, Write};

use nalgebra::{DVector, Quaternion, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::*;
use crate::cascade::{audit_solution, AuditTolerances, PhysicalContext};
use crate::controllers::{center_of_mass, Controller, ControllerConfig, Phase};
use crate::model::{centroidal_momentum, frame_pose};
use crate::tasks::shrunk_polygon;

/// Post-solve checks of one control cycle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleAudit {
    /// Largest Newton-Euler residual of the commanded solution.
    pub ne_residual: f64,
    /// Largest commanded CoP row excess over the shrunk polygons (≤ 0 inside).
    pub cop_excess: f64,
    /// Smallest commanded friction-pyramid margin.
    pub friction_margin: f64,
    pub torque_violation: f64,
    pub acceleration_violation: f64,
    pub flags: usize,
    pub feasible: bool,
}

/// Everything logged for one control cycle. The state is the one the
/// controller saw; wrenches are those the simulator realized over the
/// following step.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleRecord {
    pub cycle: usize,
    pub time: f64,
    pub phase: Option<Phase>,
    pub state: RobotState,
    pub com: Vector3<f64>,
    pub com_reference: Vector3<f64>,
    /// Centroidal momentum `[linear; angular]` about the CoM.
    pub momentum: Vector6<f64>,
    pub torque_command: DVector<f64>,
    pub torque_applied: DVector<f64>,
    /// Per foot: commanded wrench in the sole frame.
    pub commanded: Vec<Option<Vector6<f64>>>,
    /// Per foot: realized wrench in the sole frame.
    pub realized: Vec<Option<Vector6<f64>>>,
    /// Per foot: realized wrench in inertial axes about the sole origin.
    pub realized_world: Vec<Option<Vector6<f64>>>,
    /// Per foot: lowest sole corner above the ground, m.
    pub foot_heights: Vec<f64>,
    pub external: Vector6<f64>,
    pub audit: CycleAudit,
    /// Cascade solve time, s.
    pub solve_time: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// Level 1 of the cascade had no solution or the solver gave up.
    Infeasible,
    /// The controller rejected its inputs.
    Controller,
    /// Non-finite numbers in the simulation.
    NumericalFault,
    Fall,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub cycle: usize,
    pub time: f64,
    pub kind: FailureKind,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub controller: String,
    pub dt: f64,
    pub feet: Vec<String>,
    pub records: Vec<CycleRecord>,
    pub events: Vec<ContactEvent>,
    pub failure: Option<Failure>,
    /// End of the last force or platform disturbance, s.
    pub disturbance_end: Option<f64>,
}

/// Distribution of per-cycle solve times, µs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub samples: usize,
    pub min: f64,
    pub median: f64,
    pub p99: f64,
    pub max: f64,
    pub mean: f64,
}

impl TimingStats {
    /// Nearest-rank percentiles of `samples`.
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let rank = |p: f64| s[((p * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        Self {
            samples: s.len(),
            min: s[0],
            median: rank(0.5),
            p99: rank(0.99),
            max: s[s.len() - 1],
            mean: s.iter().sum::<f64>() / s.len() as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseEntry {
    pub phase: Phase,
    pub time: f64,
}

/// Headline numbers of an episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub controller: String,
    pub cycles: usize,
    pub duration: f64,
    pub failed: bool,
    pub failure: Option<Failure>,
    /// RMS of `‖x_G − x_ref‖`, m.
    pub com_rmse: f64,
    pub com_rmse_axes: [f64; 3],
    pub max_com_error: f64,
    /// Time after the last disturbance ends until the CoM error stays below
    /// `recovery_tolerance` (`None` if it never settles).
    pub recovery_time: Option<f64>,
    pub recovery_tolerance: f64,
    pub peak_angular_momentum: f64,
    pub final_angular_momentum: f64,
    /// Largest realized CoP distance outside the sole polygons, m (≤ 0 when
    /// always inside).
    pub max_cop_excursion: f64,
    pub max_ne_residual: f64,
    pub audit_flagged_cycles: usize,
    pub phases: Vec<PhaseEntry>,
    pub contact_events: usize,
    /// Cascade solve time, µs.
    pub timing: TimingStats,
}

/// Normal load below which a realized CoP is not reported, N. A flat foot
/// about to lift off carries residual moments that make the ratio
/// meaningless.
pub const MIN_COP_LOAD: f64 = 1.0;

/// Signed distance of a local CoP outside a `(x_forward, x_backward,
/// y_left, y_right)` rectangle; `None` below [`MIN_COP_LOAD`].
pub fn cop_outside(local: &Vector6<f64>, polygon: [f64; 4]) -> Option<f64> {
    let (x, y) = local_cop(local)?;
    let [xf, xb, yl, yr] = polygon;
    Some((x - xf).max(-xb - x).max(y - yl).max(-yr - y))
}

pub fn local_cop(local: &Vector6<f64>) -> Option<(f64, f64)> {
    (local[2] >= MIN_COP_LOAD).then(|| (-local[4] / local[2], local[3] / local[2]))
}

fn to_local(rotation: &Matrix3<f64>, world: &Vector6<f64>) -> Vector6<f64> {
    let rt = rotation.transpose();
    let f = rt * world.fixed_rows::<3>(0);
    let m = rt * world.fixed_rows::<3>(3);
    Vector6::new(f.x, f.y, f.z, m.x, m.y, m.z)
}

/// Runs the closed loop for `sim.duration` seconds. Controller errors,
/// infeasibility, numerical faults and falls end the episode early and are
/// recorded in [`EpisodeLog::failure`]; the records before that are kept.
pub fn run_episode(
    controller: &mut dyn Controller,
    model: &RobotModel,
    initial: &RobotState,
    sim: &SimConfig,
    disturbances: &[Disturbance],
) -> Result<EpisodeLog, SimError> {
    sim.check()?;
    for d in disturbances {
        d.check(model, sim.dt)?;
    }
    let config: ControllerConfig = controller.config().clone();
    let plant = perturbed_model(model, sim.mass_perturbation, sim.seed)?;
    let feet = ContactSet::new(
        sim.feet
            .iter()
            .map(|name| Contact::centered(model, name, config.foot_length, config.foot_width, config.friction))
            .collect::<Result<Vec<_>, _>>()?,
    );
    let mut world = SimWorld::new(&plant, initial.clone(), &feet, sim)?;
    let com0 = center_of_mass(&plant, initial).z;
    let tolerances = AuditTolerances::default();
    let mut log = EpisodeLog {
        controller: controller.name().to_string(),
        dt: sim.dt,
        feet: sim.feet.clone(),
        records: Vec::new(),
        events: Vec::new(),
        failure: None,
        disturbance_end: disturbances.iter().map(Disturbance::end).reduce(f64::max),
    };

    for cycle in 0..sim.cycles() {
        let time = cycle as f64 * sim.dt;
        let state = world.state.clone();
        let fail = |kind, message: String| Failure {
            cycle,
            time,
            kind,
            message,
        };
        let out = match controller.control(model, &state, time) {
            Ok(out) => out,
            Err(crate::controllers::ControllerError::Cascade(e)) => {
                log.failure = Some(fail(FailureKind::Infeasible, e.to_string()));
                break;
            }
            Err(e) => {
                log.failure = Some(fail(FailureKind::Controller, e.to_string()));
                break;
            }
        };
        if !out.solution.feasible() {
            log.failure = Some(fail(FailureKind::Infeasible, "highest priority level is infeasible".into()));
            break;
        }

        let context = PhysicalContext::new(model, &state, &out.dynamics, &out.contacts, config.cop_margin, config.dt)
            .map_err(|e| SimError::Configuration(e.to_string()))?;
        let report = audit_solution(&out.hierarchy, &out.solution, Some(&context), &tolerances);
        let physical = report.physical.clone().unwrap_or_default();
        let audit = CycleAudit {
            ne_residual: physical.newton_euler_residual,
            cop_excess: physical.cop_excess.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            friction_margin: physical.friction_margins.iter().copied().fold(f64::INFINITY, f64::min),
            torque_violation: physical.torque_violation,
            acceleration_violation: physical.acceleration_violation,
            flags: report.flags.len(),
            feasible: out.solution.feasible(),
        };

        let lambda = out.solution.lambda();
        let mut commanded = vec![None; feet.contacts.len()];
        for (slot, (contact, (rotation, _))) in out.contacts.active().zip(&out.dynamics.contact_poses).enumerate() {
            if let Some(k) = sim.feet.iter().position(|f| *f == contact.name) {
                let world = Vector6::from_iterator(lambda.rows(6 * slot, 6).iter().copied());
                commanded[k] = Some(to_local(rotation, &world));
            }
        }
        let momentum = centroidal_momentum(&plant, &state).momentum;
        let foot_heights = world.foot_heights(&plant, disturbances, sim);
        let poses: Vec<_> = feet.contacts.iter().map(|c| frame_pose(&plant, &state, c.frame).0).collect();

        let step = match world.step(&plant, &out.torques, sim, disturbances) {
            Ok(step) => step,
            Err(SimError::Fault { message, .. }) => {
                log.failure = Some(fail(FailureKind::NumericalFault, message));
                break;
            }
            Err(e) => return Err(e),
        };
        let realized = step
            .wrenches
            .iter()
            .zip(&poses)
            .map(|(w, r)| w.map(|w| to_local(r, &w)))
            .collect();
        log.events.extend(step.events.iter().cloned());
        log.records.push(CycleRecord {
            cycle,
            time,
            phase: out.phase,
            com: out.dynamics.com,
            com_reference: out.com_reference,
            momentum: Vector6::from_iterator(momentum.iter().copied()),
            torque_command: out.torques.clone(),
            torque_applied: step.applied_torques.clone(),
            commanded,
            realized,
            realized_world: step.wrenches.clone(),
            foot_heights,
            external: step.external,
            audit,
            solve_time: out.solve_time.as_secs_f64(),
            state,
        });

        let com = center_of_mass(&plant, &world.state);
        let tilt = (world.state.base_rotation()[(2, 2)]).clamp(-1.0, 1.0).acos();
        if com.z < sim.fall_height_ratio * com0 || tilt > sim.fall_tilt {
            log.failure = Some(Failure {
                cycle,
                time: world.time,
                kind: FailureKind::Fall,
                message: format!("CoM height {:.3} m, base tilt {:.2} rad", com.z, tilt),
            });
            break;
        }
    }
    Ok(log)
}

const WRENCH: [&str; 6] = ["fx", "fy", "fz", "mx", "my", "mz"];
const XYZ: [&str; 3] = ["x", "y", "z"];

impl EpisodeLog {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    /// Column names of the CSV log.
    ///
    /// `cycle, time, phase`; `com_*`, `com_ref_*` (m); `h_*` linear and
    /// `k_*` angular centroidal momentum; `base_*` position and
    /// `base_qw..qz` orientation; `q<i>` joint positions; `v<i>` generalized
    /// velocities `[q̇; v_base; ω_base]`; `tau_cmd<i>` and `tau<i>` commanded
    /// and applied torques; per foot `<foot>_cmd_active`, `<foot>_cmd_*`
    /// (commanded sole-frame wrench), `<foot>_active`, `<foot>_*` (realized
    /// sole-frame wrench), `<foot>_world_*` (realized inertial wrench about
    /// the sole origin), `<foot>_cop_x/y` (realized sole-frame CoP, empty
    /// without load), `<foot>_height`; `ext_*` external wrench about the
    /// origin; the cycle audit `ne_residual, cop_excess, friction_margin,
    /// torque_violation, accel_violation, audit_flags, feasible`; and
    /// `solve_time_us`.
    pub fn csv_header(&self) -> Vec<String> {
        let (n, dim) = self
            .records
            .first()
            .map(|r| (r.state.joints.len(), r.state.velocity.len()))
            .unwrap_or((0, 0));
        let mut h: Vec<String> = ["cycle", "time", "phase"].iter().map(|s| s.to_string()).collect();
        for prefix in ["com_", "com_ref_", "h_", "k_", "base_"] {
            h.extend(XYZ.iter().map(|a| format!("{prefix}{a}")));
        }
        h.extend(["base_qw", "base_qx", "base_qy", "base_qz"].iter().map(|s| s.to_string()));
        h.extend((0..n).map(|i| format!("q{i}")));
        h.extend((0..dim).map(|i| format!("v{i}")));
        h.extend((0..n).map(|i| format!("tau_cmd{i}")));
        h.extend((0..n).map(|i| format!("tau{i}")));
        for foot in &self.feet {
            h.push(format!("{foot}_cmd_active"));
            h.extend(WRENCH.iter().map(|w| format!("{foot}_cmd_{w}")));
            h.push(format!("{foot}_active"));
            h.extend(WRENCH.iter().map(|w| format!("{foot}_{w}")));
            h.extend(WRENCH.iter().map(|w| format!("{foot}_world_{w}")));
            h.push(format!("{foot}_cop_x"));
            h.push(format!("{foot}_cop_y"));
            h.push(format!("{foot}_height"));
        }
        h.extend(WRENCH.iter().map(|w| format!("ext_{w}")));
        h.extend(
            [
                "ne_residual",
                "cop_excess",
                "friction_margin",
                "torque_violation",
                "accel_violation",
                "audit_flags",
                "feasible",
                "solve_time_us",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        h
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.csv_header())?;
        for r in &self.records {
            let mut row: Vec<String> = vec![
                r.cycle.to_string(),
                r.time.to_string(),
                r.phase.map(|p| p.as_str().to_string()).unwrap_or_default(),
            ];
            let mut push = |v: f64| row.push(v.to_string());
            r.com.iter().chain(r.com_reference.iter()).chain(r.momentum.iter()).for_each(|v| push(*v));
            r.state.base_position.iter().for_each(|v| push(*v));
            let q = r.state.base_orientation.quaternion();
            [q.w, q.i, q.j, q.k].into_iter().for_each(&mut push);
            r.state.joints.iter().chain(r.state.velocity.iter()).for_each(|v| push(*v));
            r.torque_command.iter().chain(r.torque_applied.iter()).for_each(|v| push(*v));
            for k in 0..self.feet.len() {
                let wrench = |w: Option<Vector6<f64>>, row: &mut Vec<String>| {
                    let w = w.unwrap_or_else(Vector6::zeros);
                    row.extend(w.iter().map(|v| v.to_string()));
                };
                row.push((r.commanded[k].is_some() as u8).to_string());
                wrench(r.commanded[k], &mut row);
                row.push((r.realized[k].is_some() as u8).to_string());
                wrench(r.realized[k], &mut row);
                wrench(r.realized_world[k], &mut row);
                match r.realized[k].as_ref().and_then(local_cop) {
                    Some((x, y)) => {
                        row.push(x.to_string());
                        row.push(y.to_string());
                    }
                    None => row.extend([String::new(), String::new()]),
                }
                row.push(r.foot_heights[k].to_string());
            }
            row.extend(r.external.iter().map(|v| v.to_string()));
            let a = &r.audit;
            row.extend([
                a.ne_residual.to_string(),
                a.cop_excess.to_string(),
                a.friction_margin.to_string(),
                a.torque_violation.to_string(),
                a.acceleration_violation.to_string(),
                a.flags.to_string(),
                (a.feasible as u8).to_string(),
                (r.solve_time * 1e6).to_string(),
            ]);
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses a CSV log written by [`EpisodeLog::write_csv`]. Events, the
    /// failure and the disturbance end are not part of the CSV.
    pub fn read_csv<R: Read>(reader: R, controller: &str, dt: f64) -> Result<Self, SimError> {
        let bad = |m: String| SimError::Configuration(format!("episode CSV: {m}"));
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers().map_err(|e| bad(e.to_string()))?.iter().map(String::from).collect();
        let col = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| bad(format!("missing column `{name}`")));
        let count = |prefix: &str| {
            (0..)
                .take_while(|i| header.iter().any(|h| *h == format!("{prefix}{i}")))
                .count()
        };
        let (n, dim) = (count("q"), count("v"));
        let feet: Vec<String> = header
            .iter()
            .filter_map(|h| h.strip_suffix("_cmd_active").map(String::from))
            .collect();
        let mut records = Vec::new();
        for row in r.records() {
            let row = row.map_err(|e| bad(e.to_string()))?;
            let get = |name: &str| -> Result<&str, SimError> { Ok(row.get(col(name)?).unwrap_or("")) };
            let num = |name: &str| -> Result<f64, SimError> {
                let s = get(name)?;
                s.parse::<f64>().map_err(|_| bad(format!("bad number `{s}` in `{name}`")))
            };
            let v3 = |prefix: &str| -> Result<Vector3<f64>, SimError> {
                Ok(Vector3::new(num(&format!("{prefix}x"))?, num(&format!("{prefix}y"))?, num(&format!("{prefix}z"))?))
            };
            let w6 = |prefix: &str| -> Result<Vector6<f64>, SimError> {
                let mut out = Vector6::zeros();
                for (i, w) in WRENCH.iter().enumerate() {
                    out[i] = num(&format!("{prefix}{w}"))?;
                }
                Ok(out)
            };
            let vec = |prefix: &str, len: usize| -> Result<DVector<f64>, SimError> {
                (0..len)
                    .map(|i| num(&format!("{prefix}{i}")))
                    .collect::<Result<Vec<_>, _>>()
                    .map(DVector::from_vec)
            };
            let phase = match get("phase")? {
                "" => None,
                "double_support" => Some(Phase::DoubleSupport),
                "unloading" => Some(Phase::Unloading),
                "single_support" => Some(Phase::SingleSupport),
                other => return Err(bad(format!("unknown phase `{other}`"))),
            };
            let q = Quaternion::new(num("base_qw")?, num("base_qx")?, num("base_qy")?, num("base_qz")?);
            let h = v3("h_")?;
            let k = v3("k_")?;
            let mut commanded = Vec::new();
            let mut realized = Vec::new();
            let mut realized_world = Vec::new();
            let mut foot_heights = Vec::new();
            for foot in &feet {
                let on = |name: String| -> Result<bool, SimError> { Ok(num(&name)? != 0.0) };
                commanded.push(on(format!("{foot}_cmd_active"))?.then_some(w6(&format!("{foot}_cmd_"))?));
                let active = on(format!("{foot}_active"))?;
                realized.push(active.then_some(w6(&format!("{foot}_"))?));
                realized_world.push(active.then_some(w6(&format!("{foot}_world_"))?));
                foot_heights.push(num(&format!("{foot}_height"))?);
            }
            records.push(CycleRecord {
                cycle: num("cycle")? as usize,
                time: num("time")?,
                phase,
                state: RobotState {
                    joints: vec("q", n)?,
                    base_position: v3("base_")?,
                    base_orientation: UnitQuaternion::from_quaternion(q),
                    velocity: vec("v", dim)?,
                },
                com: v3("com_")?,
                com_reference: v3("com_ref_")?,
                momentum: Vector6::new(h.x, h.y, h.z, k.x, k.y, k.z),
                torque_command: vec("tau_cmd", n)?,
                torque_applied: vec("tau", n)?,
                commanded,
                realized,
                realized_world,
                foot_heights,
                external: w6("ext_")?,
                audit: CycleAudit {
                    ne_residual: num("ne_residual")?,
                    cop_excess: num("cop_excess")?,
                    friction_margin: num("friction_margin")?,
                    torque_violation: num("torque_violation")?,
                    acceleration_violation: num("accel_violation")?,
                    flags: num("audit_flags")? as usize,
                    feasible: num("feasible")? != 0.0,
                },
                solve_time: num("solve_time_us")? * 1e-6,
            });
        }
        Ok(Self {
            controller: controller.to_string(),
            dt,
            feet,
            records,
            events: Vec::new(),
            failure: None,
            disturbance_end: None,
        })
    }

    /// Phase entries in order.
    pub fn phases(&self) -> Vec<PhaseEntry> {
        let mut out: Vec<PhaseEntry> = Vec::new();
        for r in &self.records {
            if let Some(phase) = r.phase {
                if out.last().is_none_or(|e| e.phase != phase) {
                    out.push(PhaseEntry { phase, time: r.time });
                }
            }
        }
        out
    }

    pub fn summary(&self, polygons: &[[f64; 4]], recovery_tolerance: f64) -> EpisodeSummary {
        let len = self.records.len().max(1) as f64;
        let errors: Vec<Vector3<f64>> = self.records.iter().map(|r| r.com - r.com_reference).collect();
        let mut axes = [0.0; 3];
        for e in &errors {
            for i in 0..3 {
                axes[i] += e[i] * e[i];
            }
        }
        let com_rmse = (errors.iter().map(|e| e.norm_squared()).sum::<f64>() / len).sqrt();
        let start = self.disturbance_end.unwrap_or(0.0);
        let last_bad = self
            .records
            .iter()
            .zip(&errors)
            .filter(|(r, e)| r.time >= start && e.norm() > recovery_tolerance)
            .map(|(r, _)| r.time + self.dt)
            .fold(None, |_, t| Some(t));
        let recovery_time = if self.failed() {
            None
        } else {
            Some(last_bad.map_or(0.0, |t: f64| (t - start).max(0.0)))
        };
        let angular: Vec<f64> = self.records.iter().map(|r| r.momentum.fixed_rows::<3>(3).norm()).collect();
        let max_cop_excursion = self
            .records
            .iter()
            .flat_map(|r| {
                r.realized
                    .iter()
                    .zip(polygons)
                    .filter_map(|(w, p)| w.as_ref().and_then(|w| cop_outside(w, *p)))
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let times: Vec<f64> = self.records.iter().map(|r| r.solve_time * 1e6).collect();
        EpisodeSummary {
            controller: self.controller.clone(),
            cycles: self.records.len(),
            duration: self.records.len() as f64 * self.dt,
            failed: self.failed(),
            failure: self.failure.clone(),
            com_rmse,
            com_rmse_axes: axes.map(|a| (a / len).sqrt()),
            max_com_error: errors.iter().map(|e| e.norm()).fold(0.0, f64::max),
            recovery_time,
            recovery_tolerance,
            peak_angular_momentum: angular.iter().copied().fold(0.0, f64::max),
            final_angular_momentum: angular.last().copied().unwrap_or(0.0),
            max_cop_excursion: if max_cop_excursion.is_finite() { max_cop_excursion } else { 0.0 },
            max_ne_residual: self.records.iter().map(|r| r.audit.ne_residual).fold(0.0, f64::max),
            audit_flagged_cycles: self.records.iter().filter(|r| r.audit.flags > 0).count(),
            phases: self.phases(),
            contact_events: self.events.len(),
            timing: TimingStats::from_samples(&times),
        }
    }
}

/// Sole polygons `(x_forward, x_backward, y_left, y_right)` of the feet,
/// shrunk by `margin`.
pub fn foot_polygons(config: &ControllerConfig, feet: usize, margin: f64) -> Result<Vec<[f64; 4]>, SimError> {
    let l = 0.5 * config.foot_length;
    let w = 0.5 * config.foot_width;
    let probe = Contact {
        name: "foot".into(),
        frame: 0,
        x_forward: l,
        x_backward: l,
        y_left: w,
        y_right: w,
        friction: config.friction,
        active: true,
    };
    let polygon = shrunk_polygon(&probe, margin).map_err(|e| SimError::Configuration(e.to_string()))?;
    Ok(vec![polygon; feet])
}

/// Invariant violation found when re-checking a log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogFlag {
    Infeasible { cycle: usize },
    NewtonEuler { cycle: usize, residual: f64 },
    CommandedCop { cycle: usize, foot: String, excess: f64 },
    CommandedFriction { cycle: usize, foot: String, excess: f64 },
    Unilaterality { cycle: usize, foot: String, normal_force: f64 },
    TorqueLimit { cycle: usize, joint: usize, excess: f64 },
    AccelerationLimit { cycle: usize, excess: f64 },
    RealizedCop { cycle: usize, foot: String, excess: f64 },
}

impl LogFlag {
    pub fn cycle(&self) -> usize {
        match self {
            LogFlag::Infeasible { cycle }
            | LogFlag::NewtonEuler { cycle, .. }
            | LogFlag::CommandedCop { cycle, .. }
            | LogFlag::CommandedFriction { cycle, .. }
            | LogFlag::Unilaterality { cycle, .. }
            | LogFlag::TorqueLimit { cycle, .. }
            | LogFlag::AccelerationLimit { cycle, .. }
            | LogFlag::RealizedCop { cycle, .. } => *cycle,
        }
    }
}

/// Re-checks every cycle of a log against the controller invariants:
/// feasibility, Newton-Euler residual, commanded CoP, friction and
/// unilaterality, torque and acceleration boxes, and realized CoPs inside
/// the physical soles.
pub fn audit_log(
    log: &EpisodeLog,
    model: &RobotModel,
    config: &ControllerConfig,
    tolerances: &AuditTolerances,
) -> Result<Vec<LogFlag>, SimError> {
    let shrunk = foot_polygons(config, log.feet.len(), config.cop_margin)?;
    let full = foot_polygons(config, log.feet.len(), 0.0)?;
    let (lo, hi) = model.torque_limits();
    let mut flags = Vec::new();
    // Commanded wrenches come from the optimizer, which holds its rows to
    // about 1e-9 relative to the load.
    let scale = |w: &Vector6<f64>| tolerances.constraint * (1.0 + w[2].abs());
    for r in &log.records {
        let cycle = r.cycle;
        if !r.audit.feasible {
            flags.push(LogFlag::Infeasible { cycle });
        }
        if r.audit.ne_residual > tolerances.newton_euler {
            flags.push(LogFlag::NewtonEuler {
                cycle,
                residual: r.audit.ne_residual,
            });
        }
        if r.audit.acceleration_violation > tolerances.constraint {
            flags.push(LogFlag::AccelerationLimit {
                cycle,
                excess: r.audit.acceleration_violation,
            });
        }
        for (k, foot) in log.feet.iter().enumerate() {
            if let Some(w) = &r.commanded[k] {
                let [xf, xb, yl, yr] = shrunk[k];
                let excess = [-w[4] - xf * w[2], w[4] - xb * w[2], w[3] - yl * w[2], -w[3] - yr * w[2]]
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max);
                if excess > scale(w) {
                    flags.push(LogFlag::CommandedCop {
                        cycle,
                        foot: foot.clone(),
                        excess,
                    });
                }
                let margin = config.friction / std::f64::consts::SQRT_2 * w[2] - w[0].abs().max(w[1].abs());
                if margin < -scale(w) {
                    flags.push(LogFlag::CommandedFriction {
                        cycle,
                        foot: foot.clone(),
                        excess: -margin,
                    });
                }
                if w[2] < -tolerances.constraint {
                    flags.push(LogFlag::Unilaterality {
                        cycle,
                        foot: foot.clone(),
                        normal_force: w[2],
                    });
                }
            }
            if let Some(excess) = r.realized[k].as_ref().and_then(|w| cop_outside(w, full[k])) {
                if excess > 1e-6 {
                    flags.push(LogFlag::RealizedCop {
                        cycle,
                        foot: foot.clone(),
                        excess,
                    });
                }
            }
        }
        for i in 0..r.torque_command.len().min(lo.len()) {
            let t = r.torque_command[i];
            let excess = (t - hi[i]).max(lo[i] - t);
            if excess > tolerances.constraint {
                flags.push(LogFlag::TorqueLimit { cycle, joint: i, excess });
            }
        }
    }
    Ok(flags)
}
