use super::*;
use crate::model::GRAVITY;
use crate::tasks::{
    build_acceleration_limit_rows, build_contact_constraint, build_cop_rows, build_dynamics_constraint,
    build_force_regularizer, build_friction_rows, build_momentum_task, build_torque_limit_rows,
    default_force_targets, MomentumForm, MomentumRows,
};

/// Five priorities: dynamics and torque limits; contact set; CoM PD written
/// on the contact forces; posture; force regularization.
pub fn tracking_hierarchy(
    model: &RobotModel,
    state: &RobotState,
    contacts: &ContactSet,
    config: &ControllerConfig,
    com_ref: &ComReference,
    posture: &PostureReference,
) -> Result<Hierarchy, ControllerError> {
    let dynamics = Dynamics::compute(model, state, contacts, &GRAVITY);
    tracking_hierarchy_with(model, state, contacts, &dynamics, config, com_ref, posture)
}

pub fn tracking_hierarchy_with(
    model: &RobotModel,
    state: &RobotState,
    contacts: &ContactSet,
    dynamics: &Dynamics,
    config: &ControllerConfig,
    com_ref: &ComReference,
    posture: &PostureReference,
) -> Result<Hierarchy, ControllerError> {
    if contacts.active_count() != 2 {
        return Err(ControllerError::Configuration(format!(
            "tracking hierarchy needs 2 active contacts, got {}",
            contacts.active_count()
        )));
    }
    config.check()?;
    let layout = reduced_or_full(model.dof(), 2, config);

    let mut level1 = build_dynamics_constraint(dynamics, &layout)?;
    level1.append(build_torque_limit_rows(model, dynamics, &layout)?);

    let mut level2 = build_contact_constraint(dynamics, &layout)?;
    level2.append(build_cop_rows(dynamics, contacts, &layout, config.cop_margin)?);
    level2.append(build_friction_rows(dynamics, contacts, &layout)?);
    level2.append(build_acceleration_limit_rows(model, state, &layout, config.dt)?);

    let hd_ref = com_force_reference(dynamics, config, com_ref);
    let level3 = build_momentum_task(
        dynamics,
        &hd_ref,
        &layout,
        MomentumForm::Force,
        MomentumRows::Linear,
        config.weights.com,
    )?;
    let level4 = posture_task(state, posture, config, &layout, true)?;
    let targets = static_force_targets(
        dynamics,
        &default_force_targets(2, dynamics.total_mass, &dynamics.gravity),
        &[true; 2],
    );
    let level5 = build_force_regularizer(dynamics, &layout, &targets, config.weights.regularizer)?;
    Ok(finish(vec![level1, level2, level3, level4, level5], layout, dynamics))
}

/// `c + A sin(2πft)` on every axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SineReference {
    pub center: Vector3<f64>,
    pub amplitude: Vector3<f64>,
    pub frequency: f64,
}

impl SineReference {
    pub fn at(&self, t: f64) -> ComReference {
        let w = 2.0 * std::f64::consts::PI * self.frequency;
        let (s, c) = (w * t).sin_cos();
        ComReference {
            position: self.center + self.amplitude * s,
            velocity: self.amplitude * (w * c),
            acceleration: -self.amplitude * (w * w * s),
        }
    }
}

/// Closed-loop CoM tracker.
#[derive(Clone, Debug)]
pub struct TrackingController {
    pub config: ControllerConfig,
    pub contacts: ContactSet,
    pub reference: SineReference,
    pub posture: PostureReference,
}

impl TrackingController {
    /// Sine about the initial CoM with the given amplitude (m) and frequency (Hz).
    pub fn new(
        model: &RobotModel,
        initial: &RobotState,
        config: ControllerConfig,
        amplitude: Vector3<f64>,
        frequency: f64,
    ) -> Result<Self, ControllerError> {
        config.check()?;
        Ok(Self {
            contacts: foot_contacts(model, &config)?,
            reference: SineReference {
                center: center_of_mass(model, initial),
                amplitude,
                frequency,
            },
            posture: PostureReference::from_state(initial),
            config,
        })
    }
}

impl Controller for TrackingController {
    fn name(&self) -> &str {
        "tracking"
    }

    fn config(&self) -> &ControllerConfig {
        &self.config
    }

    fn control(&mut self, model: &RobotModel, state: &RobotState, time: f64) -> Result<ControlOutput, ControllerError> {
        let com_ref = self.reference.at(time);
        let dynamics = Dynamics::compute(model, state, &self.contacts, &GRAVITY);
        let h = tracking_hierarchy_with(model, state, &self.contacts, &dynamics, &self.config, &com_ref, &self.posture)?;
        solve_cycle(h, dynamics, self.contacts.clone(), com_ref.position, None)
    }
}
