//! Closed-loop test bed: constraint-based forward dynamics of a legged robot
//! on a (possibly tilting) ground plane, disturbance injection and episode
//! recording.

mod episode;

pub use episode::*;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{mass_matrix, Contact, ContactSet, Dynamics, Kinematics, ModelError, RobotModel, RobotState};
use crate::spatial::rotation_log;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("simulation configuration error: {0}")]
    Configuration(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("simulation fault at t = {time:.4} s: {message}")]
    Fault { time: f64, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ContactModel {
    /// Rigid flat-foot constraints, Baumgarte-stabilized.
    Hard { stiffness: f64, damping: f64 },
    /// Spring-damper at the four sole corners with viscous, friction-limited
    /// tangential forces.
    Compliant {
        stiffness: f64,
        damping: f64,
        tangential_damping: f64,
    },
}

impl Default for ContactModel {
    fn default() -> Self {
        ContactModel::Hard {
            stiffness: 2500.0,
            damping: 100.0,
        }
    }
}

impl ContactModel {
    /// Spring-damper parameters that stay stable at a 1 ms step.
    pub fn compliant() -> Self {
        ContactModel::Compliant {
            stiffness: 5e4,
            damping: 500.0,
            tangential_damping: 200.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub duration: f64,
    pub gravity: [f64; 3],
    pub ground_height: f64,
    pub contact: ContactModel,
    /// Penetration of a free sole origin that counts as touchdown, m.
    pub touchdown_depth: f64,
    /// Sole frames that can touch the ground.
    pub feet: Vec<String>,
    /// Relative spread of the link-mass perturbation (0.1 = ±10%).
    pub mass_perturbation: f64,
    pub seed: u64,
    /// Clamp commanded torques to the model limits.
    pub saturate_torques: bool,
    /// The episode counts as a fall once the CoM drops below this fraction
    /// of its initial height.
    pub fall_height_ratio: f64,
    /// ... or the base tilts beyond this angle, rad.
    pub fall_tilt: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.001,
            duration: 5.0,
            gravity: [0.0, 0.0, -9.81],
            ground_height: 0.0,
            contact: ContactModel::default(),
            touchdown_depth: 1e-4,
            feet: vec!["l_sole".into(), "r_sole".into()],
            mass_perturbation: 0.0,
            seed: 0,
            saturate_torques: true,
            fall_height_ratio: 0.6,
            fall_tilt: 1.0,
        }
    }
}

impl SimConfig {
    pub fn check(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0) || !(self.duration >= 0.0) {
            return Err(SimError::Configuration("dt must be positive and duration non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.mass_perturbation) {
            return Err(SimError::Configuration("mass perturbation must lie in [0, 1)".into()));
        }
        if !(self.touchdown_depth >= 0.0) {
            return Err(SimError::Configuration("touchdown depth must be non-negative".into()));
        }
        Ok(())
    }

    pub fn gravity(&self) -> Vector3<f64> {
        Vector3::from(self.gravity)
    }

    pub fn cycles(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

/// External excitation of an episode. Wrenches are `[force; moment]` in
/// inertial axes, applied at the origin of `frame`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Disturbance {
    /// Rectangular pulse delivering `impulse` (N·s, N·m·s) over `duration`.
    Impulse {
        frame: String,
        impulse: [f64; 6],
        start: f64,
        duration: f64,
    },
    Constant {
        frame: String,
        wrench: [f64; 6],
        start: f64,
        duration: f64,
    },
    /// Ground tilt `θ = A sin(2πf(t − start))` about the inertial y axis
    /// through the origin; the final angle is held afterwards.
    PlatformTilt {
        amplitude: f64,
        frequency: f64,
        start: f64,
        duration: f64,
    },
}

impl Disturbance {
    pub fn check(&self, model: &RobotModel, dt: f64) -> Result<(), SimError> {
        match self {
            Disturbance::Impulse { frame, duration, .. } => {
                model.frame_index(frame)?;
                if *duration < dt {
                    return Err(SimError::Configuration(format!(
                        "impulse duration {duration} s is shorter than one step"
                    )));
                }
            }
            Disturbance::Constant { frame, duration, .. } => {
                model.frame_index(frame)?;
                if *duration < 0.0 {
                    return Err(SimError::Configuration("negative disturbance duration".into()));
                }
            }
            Disturbance::PlatformTilt { duration, frequency, .. } => {
                if *duration < 0.0 || *frequency < 0.0 {
                    return Err(SimError::Configuration("negative platform duration or frequency".into()));
                }
            }
        }
        Ok(())
    }

    /// Applied frame and wrench at time `t`, if any.
    pub fn wrench_at(&self, t: f64) -> Option<(&str, Vector6<f64>)> {
        let window = |start: f64, duration: f64| t >= start - 1e-12 && t < start + duration - 1e-12;
        match self {
            Disturbance::Impulse { frame, impulse, start, duration } if window(*start, *duration) => {
                Some((frame.as_str(), Vector6::from(*impulse) / *duration))
            }
            Disturbance::Constant { frame, wrench, start, duration } if window(*start, *duration) => {
                Some((frame.as_str(), Vector6::from(*wrench)))
            }
            _ => None,
        }
    }

    /// End of the excitation, s.
    pub fn end(&self) -> f64 {
        match self {
            Disturbance::Impulse { start, duration, .. }
            | Disturbance::Constant { start, duration, .. }
            | Disturbance::PlatformTilt { start, duration, .. } => start + duration,
        }
    }
}

/// Orientation, angular velocity and angular acceleration of the ground.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundMotion {
    pub rotation: Matrix3<f64>,
    pub omega: Vector3<f64>,
    pub alpha: Vector3<f64>,
    pub height: f64,
}

impl GroundMotion {
    pub fn at(t: f64, height: f64, disturbances: &[Disturbance]) -> Self {
        let (mut theta, mut rate, mut accel) = (0.0, 0.0, 0.0);
        for d in disturbances {
            if let Disturbance::PlatformTilt { amplitude, frequency, start, duration } = *d {
                if t < start {
                    continue;
                }
                let w = 2.0 * std::f64::consts::PI * frequency;
                let tau = (t - start).min(duration);
                theta += amplitude * (w * tau).sin();
                if t - start < duration {
                    rate += amplitude * w * (w * tau).cos();
                    accel -= amplitude * w * w * (w * tau).sin();
                }
            }
        }
        Self {
            rotation: *Rotation3::from_axis_angle(&Vector3::y_axis(), theta).matrix(),
            omega: Vector3::y() * rate,
            alpha: Vector3::y() * accel,
            height,
        }
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.rotation * Vector3::z()
    }

    /// Signed distance of `p` above the plane.
    pub fn height_of(&self, p: &Vector3<f64>) -> f64 {
        self.normal().dot(p) - self.height
    }

    /// Velocity and acceleration of the ground-fixed point currently at `p`.
    fn point_motion(&self, p: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
        let v = self.omega.cross(p);
        let a = self.alpha.cross(p) + self.omega.cross(&v);
        (v, a)
    }
}

/// One sole that can touch the ground.
#[derive(Clone, Debug, PartialEq)]
pub struct Foot {
    pub contact: Contact,
    pub active: bool,
    /// Pose held while active, in ground-fixed coordinates.
    pub anchor: (Matrix3<f64>, Vector3<f64>),
}

impl Foot {
    fn corners(&self) -> [Vector3<f64>; 4] {
        let c = &self.contact;
        [
            Vector3::new(c.x_forward, c.y_left, 0.0),
            Vector3::new(c.x_forward, -c.y_right, 0.0),
            Vector3::new(-c.x_backward, c.y_left, 0.0),
            Vector3::new(-c.x_backward, -c.y_right, 0.0),
        ]
    }
}

/// Simulated robot and ground contacts.
#[derive(Clone, Debug, PartialEq)]
pub struct SimWorld {
    pub state: RobotState,
    pub time: f64,
    pub feet: Vec<Foot>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactEventKind {
    Touchdown,
    Liftoff,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub time: f64,
    pub foot: String,
    pub kind: ContactEventKind,
}

/// What one integration step realized.
#[derive(Clone, Debug)]
pub struct StepReport {
    /// Per foot: world wrench `[f; n]` about the sole origin, `None` when
    /// the foot carries no load.
    pub wrenches: Vec<Option<Vector6<f64>>>,
    /// Impact impulses per foot (world, about the sole origin).
    pub impulses: Vec<Option<Vector6<f64>>>,
    pub applied_torques: DVector<f64>,
    /// Sum of the external forces and of their moments about the origin.
    pub external: Vector6<f64>,
    pub qdd: DVector<f64>,
    pub events: Vec<ContactEvent>,
}

impl SimWorld {
    /// Places the robot and activates every foot whose sole touches the
    /// ground within 1 mm.
    pub fn new(
        model: &RobotModel,
        state: RobotState,
        feet: &ContactSet,
        config: &SimConfig,
    ) -> Result<Self, SimError> {
        config.check()?;
        state.check(model)?;
        let ground = GroundMotion::at(0.0, config.ground_height, &[]);
        let kin = Kinematics::compute(model, &state);
        let feet = feet
            .contacts
            .iter()
            .map(|c| {
                let (r, p) = kin.frame_pose(model, c.frame);
                let mut foot = Foot {
                    contact: c.clone(),
                    active: false,
                    anchor: (r, p),
                };
                let lowest = foot
                    .corners()
                    .iter()
                    .map(|k| ground.height_of(&(p + r * k)))
                    .fold(f64::INFINITY, f64::min);
                foot.active = lowest.abs() <= 1e-3;
                foot
            })
            .collect();
        Ok(Self { state, time: 0.0, feet })
    }

    pub fn foot_heights(&self, model: &RobotModel, disturbances: &[Disturbance], config: &SimConfig) -> Vec<f64> {
        let ground = GroundMotion::at(self.time, config.ground_height, disturbances);
        let kin = Kinematics::compute(model, &self.state);
        self.feet
            .iter()
            .map(|f| {
                let (r, p) = kin.frame_pose(model, f.contact.frame);
                f.corners()
                    .iter()
                    .map(|k| ground.height_of(&(p + r * k)))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    /// Advances one `dt` under `torques` with semi-implicit Euler.
    pub fn step(
        &mut self,
        model: &RobotModel,
        torques: &DVector<f64>,
        config: &SimConfig,
        disturbances: &[Disturbance],
    ) -> Result<StepReport, SimError> {
        let n = model.dof();
        if torques.len() != n {
            return Err(SimError::Configuration(format!(
                "expected {n} torques, got {}",
                torques.len()
            )));
        }
        let fault = |time: f64, message: &str| SimError::Fault {
            time,
            message: message.to_string(),
        };
        if torques.iter().any(|t| !t.is_finite()) {
            return Err(fault(self.time, "non-finite torque command"));
        }
        let applied = if config.saturate_torques {
            let (lo, hi) = model.torque_limits();
            torques.zip_zip_map(&lo, &hi, |t, l, h| t.clamp(l, h))
        } else {
            torques.clone()
        };

        let gravity = config.gravity();
        let ground = GroundMotion::at(self.time, config.ground_height, disturbances);
        let all = ContactSet::new(
            self.feet
                .iter()
                .map(|f| Contact {
                    active: true,
                    ..f.contact.clone()
                })
                .collect(),
        );
        let dynamics = Dynamics::compute(model, &self.state, &all, &gravity);
        let kin = &dynamics.kinematics;

        let mut generalized = DVector::zeros(model.dim());
        generalized.rows_mut(0, n).copy_from(&applied);
        let mut external = Vector6::zeros();
        for d in disturbances {
            if let Some((frame, w)) = d.wrench_at(self.time) {
                let frame = model.frame_index(frame)?;
                let (_, p) = kin.frame_pose(model, frame);
                let jac = kin.point_jacobian(model, model.frames()[frame].link, &p);
                generalized += jac.transpose() * DVector::from_column_slice(w.as_slice());
                let f = w.fixed_rows::<3>(0).into_owned();
                let moment = w.fixed_rows::<3>(3) + p.cross(&f);
                external += Vector6::new(f.x, f.y, f.z, moment.x, moment.y, moment.z);
            }
        }
        let rhs = &generalized - &dynamics.nonlinear;
        let chol = dynamics
            .mass_matrix
            .clone()
            .cholesky()
            .ok_or_else(|| fault(self.time, "mass matrix is not positive definite"))?;

        let mut events = Vec::new();
        let mut wrenches = vec![None; self.feet.len()];
        let qdd = match config.contact {
            ContactModel::Hard { stiffness, damping } => {
                let qdd_free = chol.solve(&rhs);
                loop {
                    let active: Vec<usize> = (0..self.feet.len()).filter(|&k| self.feet[k].active).collect();
                    if active.is_empty() {
                        break qdd_free;
                    }
                    let m = 6 * active.len();
                    let mut jac = DMatrix::zeros(m, model.dim());
                    let mut target = DVector::zeros(m);
                    for (slot, &k) in active.iter().enumerate() {
                        let foot = &self.feet[k];
                        let jk = dynamics.contact.matrix.rows(6 * k, 6);
                        jac.rows_mut(6 * slot, 6).copy_from(&jk);
                        let (r, p) = kin.frame_pose(model, foot.contact.frame);
                        let ra = ground.rotation * foot.anchor.0;
                        let pa = ground.rotation * foot.anchor.1;
                        let (va, aa) = ground.point_motion(&pa);
                        let twist = jk * &self.state.velocity;
                        let e_lin = p - pa;
                        let e_ang = rotation_log(&(r * ra.transpose()));
                        for i in 0..3 {
                            let lin = aa[i]
                                - dynamics.contact.drift[6 * k + i]
                                - damping * (twist[i] - va[i])
                                - stiffness * e_lin[i];
                            let ang = ground.alpha[i]
                                - dynamics.contact.drift[6 * k + 3 + i]
                                - damping * (twist[3 + i] - ground.omega[i])
                                - stiffness * e_ang[i];
                            target[6 * slot + i] = lin;
                            target[6 * slot + 3 + i] = ang;
                        }
                    }
                    let minv_jt = chol.solve(&jac.transpose());
                    let delassus = &jac * &minv_jt;
                    let lambda = solve_spd(&delassus, &(&target - &jac * &qdd_free))
                        .ok_or_else(|| fault(self.time, "singular contact constraints"))?;
                    let mut worst: Option<(usize, f64)> = None;
                    for (slot, &k) in active.iter().enumerate() {
                        let (r, _) = kin.frame_pose(model, self.feet[k].contact.frame);
                        let f = Vector3::new(lambda[6 * slot], lambda[6 * slot + 1], lambda[6 * slot + 2]);
                        let normal = (r.transpose() * f).z;
                        if normal < 0.0 && worst.is_none_or(|(_, w)| normal < w) {
                            worst = Some((k, normal));
                        }
                    }
                    if let Some((k, _)) = worst {
                        self.feet[k].active = false;
                        events.push(ContactEvent {
                            time: self.time,
                            foot: self.feet[k].contact.name.clone(),
                            kind: ContactEventKind::Liftoff,
                        });
                        continue;
                    }
                    for (slot, &k) in active.iter().enumerate() {
                        wrenches[k] = Some(Vector6::from_iterator(lambda.rows(6 * slot, 6).iter().copied()));
                    }
                    break &qdd_free + &minv_jt * &lambda;
                }
            }
            ContactModel::Compliant {
                stiffness,
                damping,
                tangential_damping,
            } => {
                let normal = ground.normal();
                let mut contact_force = DVector::zeros(model.dim());
                for (k, foot) in self.feet.iter_mut().enumerate() {
                    let (r, p) = kin.frame_pose(model, foot.contact.frame);
                    let link = model.frames()[foot.contact.frame].link;
                    let mut wrench = Vector6::zeros();
                    let mut touching = false;
                    for corner in foot.corners() {
                        let c = p + r * corner;
                        let depth = -ground.height_of(&c);
                        if depth <= 0.0 {
                            continue;
                        }
                        let jac = kin.point_jacobian(model, link, &c);
                        let jl = jac.rows(0, 3);
                        let v = Vector3::from_iterator((jl * &self.state.velocity).iter().copied());
                        let v_rel = v - ground.point_motion(&c).0;
                        let vn = normal.dot(&v_rel);
                        let fn_ = (stiffness * depth - damping * vn).max(0.0);
                        let vt = v_rel - normal * vn;
                        let mut ft = -vt * tangential_damping;
                        let limit = foot.contact.friction * fn_;
                        if ft.norm() > limit {
                            ft *= limit / ft.norm();
                        }
                        let f = normal * fn_ + ft;
                        contact_force += jl.transpose() * DVector::from_column_slice(f.as_slice());
                        let m = (c - p).cross(&f);
                        wrench += Vector6::new(f.x, f.y, f.z, m.x, m.y, m.z);
                        touching = true;
                    }
                    if touching != foot.active {
                        events.push(ContactEvent {
                            time: self.time,
                            foot: foot.contact.name.clone(),
                            kind: if touching {
                                ContactEventKind::Touchdown
                            } else {
                                ContactEventKind::Liftoff
                            },
                        });
                    }
                    foot.active = touching;
                    if touching {
                        wrenches[k] = Some(wrench);
                    }
                }
                chol.solve(&(&rhs + contact_force))
            }
        };

        let mut next = self.state.clone();
        next.velocity += &qdd * config.dt;
        let next = next.integrate_configuration(&next.velocity, config.dt);
        let time = self.time + config.dt;
        let finite = next.velocity.iter().chain(next.joints.iter()).all(|v| v.is_finite())
            && next.base_position.iter().all(|v| v.is_finite())
            && next.base_orientation.coords.iter().all(|v| v.is_finite());
        if !finite {
            return Err(fault(time, "non-finite state"));
        }
        self.state = next;
        self.time = time;

        let mut impulses = vec![None; self.feet.len()];
        if matches!(config.contact, ContactModel::Hard { .. }) {
            self.touchdown(model, config, disturbances, &mut events, &mut impulses)?;
        }
        Ok(StepReport {
            wrenches,
            impulses,
            applied_torques: applied,
            external,
            qdd,
            events,
        })
    }

    /// Activates approaching feet that reached the ground and applies a
    /// plastic impact to every active foot.
    fn touchdown(
        &mut self,
        model: &RobotModel,
        config: &SimConfig,
        disturbances: &[Disturbance],
        events: &mut Vec<ContactEvent>,
        impulses: &mut [Option<Vector6<f64>>],
    ) -> Result<(), SimError> {
        let ground = GroundMotion::at(self.time, config.ground_height, disturbances);
        let kin = Kinematics::compute(model, &self.state);
        let mut landed = false;
        for foot in self.feet.iter_mut().filter(|f| !f.active) {
            let (r, p) = kin.frame_pose(model, foot.contact.frame);
            let link = model.frames()[foot.contact.frame].link;
            // Flat-foot model: the sole lands when its centre sinks below the
            // plane while approaching it.
            let jac = kin.point_jacobian(model, link, &p);
            let v = Vector3::from_iterator((jac.rows(0, 3) * &self.state.velocity).iter().copied());
            let approach = ground.normal().dot(&(v - ground.point_motion(&p).0));
            let hit = ground.height_of(&p) <= -config.touchdown_depth && approach < 0.0;
            if hit {
                let h = ground.height_of(&p);
                let pa = p - ground.normal() * h;
                // Land flat: keep the heading, align the sole normal with the ground.
                let flatten = Rotation3::rotation_between(&(r * Vector3::z()), &ground.normal())
                    .unwrap_or_else(Rotation3::identity);
                let gt = ground.rotation.transpose();
                foot.anchor = (gt * flatten.matrix() * r, gt * pa);
                foot.active = true;
                landed = true;
                events.push(ContactEvent {
                    time: self.time,
                    foot: foot.contact.name.clone(),
                    kind: ContactEventKind::Touchdown,
                });
            }
        }
        if !landed {
            return Ok(());
        }
        let active: Vec<usize> = (0..self.feet.len()).filter(|&k| self.feet[k].active).collect();
        let m = 6 * active.len();
        let mut jac = DMatrix::zeros(m, model.dim());
        let mut target = DVector::zeros(m);
        for (slot, &k) in active.iter().enumerate() {
            let (_, p) = kin.frame_pose(model, self.feet[k].contact.frame);
            let jk = kin.point_jacobian(model, model.frames()[self.feet[k].contact.frame].link, &p);
            jac.rows_mut(6 * slot, 6).copy_from(&jk);
            let pa = ground.rotation * self.feet[k].anchor.1;
            let (va, _) = ground.point_motion(&pa);
            target.fixed_rows_mut::<3>(6 * slot).copy_from(&va);
            target.fixed_rows_mut::<3>(6 * slot + 3).copy_from(&ground.omega);
        }
        let fault = |message: &str| SimError::Fault {
            time: self.time,
            message: message.to_string(),
        };
        let chol = mass_matrix(model, &self.state)
            .cholesky()
            .ok_or_else(|| fault("mass matrix is not positive definite"))?;
        let minv_jt = chol.solve(&jac.transpose());
        let delassus = &jac * &minv_jt;
        let impulse = solve_spd(&delassus, &(&target - &jac * &self.state.velocity))
            .ok_or_else(|| fault("singular impact constraints"))?;
        self.state.velocity += &minv_jt * &impulse;
        for (slot, &k) in active.iter().enumerate() {
            impulses[k] = Some(Vector6::from_iterator(impulse.rows(6 * slot, 6).iter().copied()));
        }
        Ok(())
    }
}

/// Solves `A x = b` for symmetric positive semi-definite `A`, falling back to
/// a pseudo-inverse when the Cholesky factorization fails.
fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.solve(b));
    }
    crate::linalg::lstsq(a, b, 1e-12)
}

/// Copy of `model` with every link mass scaled by an independent factor
/// drawn uniformly from `[1 − spread, 1 + spread]`.
pub fn perturbed_model(model: &RobotModel, spread: f64, seed: u64) -> Result<RobotModel, SimError> {
    if spread == 0.0 {
        return Ok(model.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors: Vec<f64> = (0..model.links().len())
        .map(|_| rng.gen_range(1.0 - spread..=1.0 + spread))
        .collect();
    Ok(model.with_scaled_masses(&factors)?)
}
