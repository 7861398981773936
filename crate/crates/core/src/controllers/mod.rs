//! Task hierarchies assembled every control cycle: double-support balancing,
//! CoM tracking, single-support balancing with contact switching, and the
//! 25-DoF stepping benchmark.

mod balance;
mod single_support;
mod stepping;
mod tracking;

pub use balance::*;
pub use single_support::*;
pub use stepping::*;
pub use tracking::*;

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::{solve_hierarchy, CascadeError, CascadeOptions, CascadeSolution, Hierarchy};
use crate::model::{com, frame_motion, frame_pose, Contact, ContactSet, Dynamics, ModelError, RobotModel, RobotState};
use crate::spatial::rotation_log;
use crate::tasks::{
    build_motion_task, contact_momentum_map, momentum_pd_reference, AffineTaskSet, Formulation, TaskError, VariableLayout,
};

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Proportional and derivative gain of one task, applied on every axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pd {
    pub kp: f64,
    pub kd: f64,
}

impl Pd {
    /// Critically damped pair `kd = 2√kp`.
    pub fn critical(kp: f64) -> Self {
        Self { kp, kd: 2.0 * kp.sqrt() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskWeights {
    pub contact: f64,
    pub momentum: f64,
    pub com: f64,
    pub swing: f64,
    pub posture: f64,
    pub regularizer: f64,
}

impl Default for TaskWeights {
    fn default() -> Self {
        Self {
            contact: 100.0,
            momentum: 1.0,
            com: 1.0,
            swing: 100.0,
            posture: 0.05,
            regularizer: 1e-3,
        }
    }
}

/// Timing and thresholds of the single-support contact switch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseConfig {
    /// Duration of the CoM shift towards the stance foot, s.
    pub shift_duration: f64,
    /// Horizontal CoM error that ends the shift once its duration is over, m.
    pub shift_tolerance: f64,
    /// Extra time after the shift before unloading starts regardless, s.
    pub shift_timeout: f64,
    /// Ramp of the swing-foot force target to zero, s.
    pub unload_ramp: f64,
    /// Swing-foot normal force counted as unloaded, N.
    pub unload_force: f64,
    pub unload_cycles: usize,
    pub unload_timeout: f64,
    pub swing_height: f64,
    pub swing_duration: f64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            shift_duration: 1.5,
            shift_tolerance: 0.005,
            shift_timeout: 1.0,
            unload_ramp: 0.5,
            unload_force: 1.0,
            unload_cycles: 50,
            unload_timeout: 1.0,
            swing_height: 0.1,
            swing_duration: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub dt: f64,
    pub formulation: Formulation,
    pub cop_margin: f64,
    pub friction: f64,
    pub foot_length: f64,
    pub foot_width: f64,
    /// Linear momentum PD (P acts on `m(x_des − x)`, D on `h_des − h`).
    pub momentum: Pd,
    /// Damping of the angular momentum.
    pub angular_damping: f64,
    /// CoM PD used as an acceleration reference (tracking and stepping).
    pub com: Pd,
    pub posture: Pd,
    /// Base pose PD inside the posture task.
    pub base: Pd,
    pub swing: Pd,
    pub weights: TaskWeights,
    pub phases: PhaseConfig,
    /// Largest torque jump per joint tolerated across a phase switch, N·m.
    pub continuity_bound: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            dt: 0.001,
            formulation: Formulation::Reduced,
            cop_margin: 0.01,
            friction: 0.8,
            foot_length: 0.22,
            foot_width: 0.1,
            momentum: Pd::critical(40.0),
            angular_damping: 10.0,
            com: Pd::critical(400.0),
            posture: Pd::critical(100.0),
            base: Pd::critical(100.0),
            swing: Pd::critical(400.0),
            weights: TaskWeights::default(),
            phases: PhaseConfig::default(),
            continuity_bound: 1.0,
        }
    }
}

impl ControllerConfig {
    pub fn check(&self) -> Result<(), ControllerError> {
        let gains = [self.momentum, self.com, self.posture, self.base, self.swing];
        if gains.iter().any(|g| !(g.kp >= 0.0 && g.kd >= 0.0)) || !(self.angular_damping >= 0.0) {
            return Err(ControllerError::Configuration("gains must be non-negative".into()));
        }
        if !(self.dt > 0.0) {
            return Err(ControllerError::Configuration("dt must be positive".into()));
        }
        if !(self.friction > 0.0) || !(self.cop_margin >= 0.0) {
            return Err(ControllerError::Configuration(
                "friction must be positive and the CoP margin non-negative".into(),
            ));
        }
        Ok(())
    }

    /// `(P, D)` of the momentum PD law.
    pub fn momentum_gains(&self) -> (Matrix6<f64>, Matrix6<f64>) {
        let p = Matrix6::from_diagonal(&Vector6::new(
            self.momentum.kp,
            self.momentum.kp,
            self.momentum.kp,
            0.0,
            0.0,
            0.0,
        ));
        let a = self.angular_damping;
        let kd = self.momentum.kd;
        let d = Matrix6::from_diagonal(&Vector6::new(kd, kd, kd, a, a, a));
        (p, d)
    }
}

/// Joint configuration and base pose the posture task pulls towards.
#[derive(Clone, Debug, PartialEq)]
pub struct PostureReference {
    pub joints: DVector<f64>,
    pub base_position: Vector3<f64>,
    pub base_orientation: UnitQuaternion<f64>,
}

impl PostureReference {
    pub fn from_state(state: &RobotState) -> Self {
        Self {
            joints: state.joints.clone(),
            base_position: state.base_position,
            base_orientation: state.base_orientation,
        }
    }
}

/// Desired CoM position, velocity and acceleration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComReference {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

impl ComReference {
    pub fn fixed(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
        }
    }
}

/// Bent-knee double stance with both soles flat on the plane `z = 0`.
pub fn nominal_stance(model: &RobotModel) -> RobotState {
    let mut state = RobotState::zero(model);
    for (i, joint) in model.joints().iter().enumerate() {
        let q: f64 = match joint.name.rsplit('_').next() {
            Some("hfe") => -0.5,
            Some("kfe") => 1.0,
            Some("afe") => -0.5,
            Some("eb") => -0.3,
            _ => 0.0,
        };
        state.joints[i] = q.clamp(joint.limits.q_min, joint.limits.q_max);
    }
    let lowest = model
        .frames()
        .iter()
        .enumerate()
        .filter(|(_, f)| f.name.ends_with("_sole"))
        .map(|(i, _)| frame_pose(model, &state, i).1.z)
        .fold(f64::INFINITY, f64::min);
    if lowest.is_finite() {
        state.base_position.z = -lowest;
    }
    state
}

/// Left and right sole contacts.
pub fn foot_contacts(model: &RobotModel, config: &ControllerConfig) -> Result<ContactSet, ControllerError> {
    let foot = |name: &str| Contact::centered(model, name, config.foot_length, config.foot_width, config.friction);
    Ok(ContactSet::new(vec![foot("l_sole")?, foot("r_sole")?]))
}

/// PD on the joint positions (and, with `with_base`, the base pose).
pub fn posture_task(
    state: &RobotState,
    reference: &PostureReference,
    config: &ControllerConfig,
    layout: &VariableLayout,
    with_base: bool,
) -> Result<AffineTaskSet, ControllerError> {
    let n = layout.n;
    if reference.joints.len() != n {
        return Err(ControllerError::Configuration(format!(
            "posture reference has {} joints, model has {n}",
            reference.joints.len()
        )));
    }
    let rows = if with_base { n + 6 } else { n };
    let mut jacobian = DMatrix::zeros(rows, n + 6);
    let mut target = DVector::zeros(rows);
    let Pd { kp, kd } = config.posture;
    for i in 0..n {
        jacobian[(i, i)] = 1.0;
        target[i] = kp * (reference.joints[i] - state.joints[i]) - kd * state.velocity[i];
    }
    if with_base {
        for k in 0..6 {
            jacobian[(n + k, n + k)] = 1.0;
        }
        let Pd { kp, kd } = config.base;
        let lin = (reference.base_position - state.base_position) * kp - state.base_linear_velocity() * kd;
        let err = rotation_log(&(reference.base_orientation * state.base_orientation.inverse())
            .to_rotation_matrix()
            .into_inner());
        let ang = err * kp - state.base_angular_velocity() * kd;
        target.fixed_rows_mut::<3>(n).copy_from(&lin);
        target.fixed_rows_mut::<3>(n + 3).copy_from(&ang);
    }
    let mut task = build_motion_task(
        "posture",
        &jacobian,
        &DVector::zeros(rows),
        &target,
        layout,
        config.weights.posture,
    )?;
    if !with_base {
        task.blocks[0].name = "posture_joints".into();
    }
    Ok(task)
}

/// Momentum-rate reference driving the CoM to `com_ref`.
pub fn momentum_reference(dynamics: &Dynamics, config: &ControllerConfig, com_ref: &ComReference) -> Vector6<f64> {
    let m = dynamics.total_mass;
    let h = Vector6::from_iterator(dynamics.centroidal.momentum.iter().copied());
    let lin = com_ref.velocity * m;
    let h_des = Vector6::new(lin.x, lin.y, lin.z, 0.0, 0.0, 0.0);
    let acc = com_ref.acceleration * m;
    let hd_des = Vector6::new(acc.x, acc.y, acc.z, 0.0, 0.0, 0.0);
    let (p, d) = config.momentum_gains();
    momentum_pd_reference(&dynamics.com, &com_ref.position, &h, &h_des, &hd_des, &p, &d, m)
}

/// Linear momentum rate `m(ẍ_des + K_p e + K_d ė)` of a CoM PD.
pub fn com_force_reference(dynamics: &Dynamics, config: &ControllerConfig, com_ref: &ComReference) -> Vector6<f64> {
    let m = dynamics.total_mass;
    let velocity = dynamics.centroidal.momentum.fixed_rows::<3>(0) / m;
    let Pd { kp, kd } = config.com;
    let acc = com_ref.acceleration + (com_ref.position - dynamics.com) * kp + (com_ref.velocity - velocity) * kd;
    let f = acc * m;
    Vector6::new(f.x, f.y, f.z, 0.0, 0.0, 0.0)
}

/// Desired pose and twist of a frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameReference {
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

/// Six rows of Cartesian PD on a frame (position and orientation).
pub fn frame_task(
    name: &str,
    model: &RobotModel,
    state: &RobotState,
    frame: usize,
    reference: &FrameReference,
    gains: Pd,
    weight: f64,
    layout: &VariableLayout,
) -> Result<AffineTaskSet, ControllerError> {
    let motion = frame_motion(model, state, frame);
    let (rotation, position) = frame_pose(model, state, frame);
    let twist = &motion.matrix * &state.velocity;
    let v = Vector3::new(twist[0], twist[1], twist[2]);
    let w = Vector3::new(twist[3], twist[4], twist[5]);
    let lin = reference.acceleration + (reference.position - position) * gains.kp + (reference.velocity - v) * gains.kd;
    let ang = rotation_log(&(reference.rotation * rotation.transpose())) * gains.kp - w * gains.kd;
    let target = DVector::from_iterator(6, lin.iter().chain(ang.iter()).copied());
    Ok(build_motion_task(name, &motion.matrix, &motion.drift, &target, layout, weight)?)
}

/// Quintic blend `s(t/T)` with zero end velocities and accelerations:
/// returns `(s, ṡ, s̈)`.
pub fn quintic(t: f64, duration: f64) -> (f64, f64, f64) {
    if duration <= 0.0 || t >= duration {
        return (1.0, 0.0, 0.0);
    }
    if t <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let x = t / duration;
    let s = x * x * x * (10.0 - 15.0 * x + 6.0 * x * x);
    let ds = 30.0 * x * x * (1.0 - x) * (1.0 - x) / duration;
    let dds = 60.0 * x * (1.0 - x) * (1.0 - 2.0 * x) / (duration * duration);
    (s, ds, dds)
}

pub(crate) fn reduced_or_full(n: usize, c: usize, config: &ControllerConfig) -> VariableLayout {
    VariableLayout::new(n, c, config.formulation)
}

/// Attaches the torque map in the reduced formulation.
pub(crate) fn finish(levels: Vec<AffineTaskSet>, layout: VariableLayout, dynamics: &Dynamics) -> Hierarchy {
    let h = Hierarchy::new(levels, layout);
    match layout.mode {
        Formulation::Reduced => h.with_torque_map(crate::tasks::torque_map(dynamics)),
        Formulation::Full => h,
    }
}

/// Everything one control cycle produced.
#[derive(Clone, Debug)]
pub struct ControlOutput {
    pub hierarchy: Hierarchy,
    pub solution: CascadeSolution,
    pub torques: DVector<f64>,
    pub dynamics: Dynamics,
    /// Contacts the controller assumed.
    pub contacts: ContactSet,
    pub com_reference: Vector3<f64>,
    pub phase: Option<Phase>,
    /// Wall time of the cascade solve only.
    pub solve_time: Duration,
}

/// A feedback controller run once per cycle.
pub trait Controller {
    fn name(&self) -> &str;
    fn config(&self) -> &ControllerConfig;
    fn control(&mut self, model: &RobotModel, state: &RobotState, time: f64) -> Result<ControlOutput, ControllerError>;
}

/// Solves a hierarchy and packages the cycle output.
pub(crate) fn solve_cycle(
    hierarchy: Hierarchy,
    dynamics: Dynamics,
    contacts: ContactSet,
    com_reference: Vector3<f64>,
    phase: Option<Phase>,
) -> Result<ControlOutput, ControllerError> {
    let start = Instant::now();
    let solution = solve_hierarchy(&hierarchy, &CascadeOptions::default())?;
    let solve_time = start.elapsed();
    let torques = solution
        .torques
        .clone()
        .ok_or_else(|| ControllerError::Configuration("hierarchy carries no torque map".into()))?;
    Ok(ControlOutput {
        hierarchy,
        solution,
        torques,
        dynamics,
        contacts,
        com_reference,
        phase,
        solve_time,
    })
}

/// CoM of the model at `state`.
pub fn center_of_mass(model: &RobotModel, state: &RobotState) -> Vector3<f64> {
    com(model, state).0
}

/// Wrench targets closest to `nominal` (contact frames) whose net wrench
/// about the CoM balances gravity. Contacts with `free[k] == false` keep
/// their nominal target.
pub fn static_force_targets(dynamics: &Dynamics, nominal: &[Vector6<f64>], free: &[bool]) -> Vec<Vector6<f64>> {
    let c = nominal.len();
    let mut rhs = Vector6::zeros();
    let weight = -dynamics.gravity * dynamics.total_mass;
    rhs.fixed_rows_mut::<3>(0).copy_from(&weight);
    let mut maps = Vec::with_capacity(c);
    for (k, target) in nominal.iter().enumerate() {
        let (r, p) = &dynamics.contact_poses[k];
        let mut world = Matrix6::zeros();
        world.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        world.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
        let map = contact_momentum_map(p, &dynamics.com) * world;
        rhs -= map * target;
        maps.push(map);
    }
    let free_idx: Vec<usize> = (0..c).filter(|&k| free.get(k).copied().unwrap_or(true)).collect();
    if free_idx.is_empty() {
        return nominal.to_vec();
    }
    let mut g = DMatrix::zeros(6, 6 * free_idx.len());
    for (j, &k) in free_idx.iter().enumerate() {
        g.view_mut((0, 6 * j), (6, 6)).copy_from(&maps[k]);
    }
    let rhs = DVector::from_column_slice(rhs.as_slice());
    let Some(delta) = crate::linalg::svd(&g).map(|s| s.solve(&rhs, 1e-12)) else {
        return nominal.to_vec();
    };
    let mut out = nominal.to_vec();
    for (j, &k) in free_idx.iter().enumerate() {
        out[k] += Vector6::from_iterator(delta.rows(6 * j, 6).iter().copied());
    }
    out
}
