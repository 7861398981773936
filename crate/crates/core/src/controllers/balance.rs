use super::*;
use crate::model::GRAVITY;
use crate::tasks::{
    build_acceleration_limit_rows, build_contact_constraint, build_cop_rows, build_dynamics_constraint,
    build_force_regularizer, build_friction_rows, build_momentum_task, build_torque_limit_rows,
    default_force_targets, MomentumForm, MomentumRows,
};

/// Set-points of the double-support balancer.
#[derive(Clone, Debug, PartialEq)]
pub struct BalanceReference {
    pub com: ComReference,
    pub posture: PostureReference,
}

impl BalanceReference {
    /// Holds the current CoM and configuration.
    pub fn hold(model: &RobotModel, state: &RobotState) -> Self {
        Self {
            com: ComReference::fixed(center_of_mass(model, state)),
            posture: PostureReference::from_state(state),
        }
    }
}

fn two_contacts(contacts: &ContactSet) -> Result<(), ControllerError> {
    match contacts.active_count() {
        2 => Ok(()),
        c => Err(ControllerError::Configuration(format!(
            "double-support hierarchy needs 2 active contacts, got {c}"
        ))),
    }
}

/// Physical constraints followed by momentum, posture and force
/// regularization at one shared priority.
pub fn balance_hierarchy(
    model: &RobotModel,
    state: &RobotState,
    contacts: &ContactSet,
    config: &ControllerConfig,
    reference: &BalanceReference,
) -> Result<Hierarchy, ControllerError> {
    two_contacts(contacts)?;
    let dynamics = Dynamics::compute(model, state, contacts, &GRAVITY);
    balance_hierarchy_with(model, state, contacts, &dynamics, config, reference)
}

/// As [`balance_hierarchy`] with precomputed dynamics.
pub fn balance_hierarchy_with(
    model: &RobotModel,
    state: &RobotState,
    contacts: &ContactSet,
    dynamics: &Dynamics,
    config: &ControllerConfig,
    reference: &BalanceReference,
) -> Result<Hierarchy, ControllerError> {
    two_contacts(contacts)?;
    config.check()?;
    let layout = reduced_or_full(model.dof(), 2, config);
    let mut physical = build_dynamics_constraint(dynamics, &layout)?;
    physical.append(build_torque_limit_rows(model, dynamics, &layout)?);
    physical.append(build_contact_constraint(dynamics, &layout)?);
    physical.append(build_cop_rows(dynamics, contacts, &layout, config.cop_margin)?);
    physical.append(build_friction_rows(dynamics, contacts, &layout)?);
    physical.append(build_acceleration_limit_rows(model, state, &layout, config.dt)?);

    let hd_ref = momentum_reference(dynamics, config, &reference.com);
    let mut tasks = build_momentum_task(
        dynamics,
        &hd_ref,
        &layout,
        MomentumForm::Kinematic,
        MomentumRows::All,
        config.weights.momentum,
    )?;
    tasks.append(posture_task(state, &reference.posture, config, &layout, true)?);
    let targets = static_force_targets(
        dynamics,
        &default_force_targets(2, dynamics.total_mass, &dynamics.gravity),
        &[true; 2],
    );
    tasks.append(build_force_regularizer(dynamics, &layout, &targets, config.weights.regularizer)?);
    Ok(finish(vec![physical, tasks], layout, dynamics))
}

/// Closed-loop double-support balancer.
#[derive(Clone, Debug)]
pub struct BalanceController {
    pub config: ControllerConfig,
    pub contacts: ContactSet,
    pub reference: BalanceReference,
}

impl BalanceController {
    pub fn new(
        model: &RobotModel,
        initial: &RobotState,
        config: ControllerConfig,
    ) -> Result<Self, ControllerError> {
        config.check()?;
        Ok(Self {
            contacts: foot_contacts(model, &config)?,
            reference: BalanceReference::hold(model, initial),
            config,
        })
    }
}

impl Controller for BalanceController {
    fn name(&self) -> &str {
        "balance"
    }

    fn config(&self) -> &ControllerConfig {
        &self.config
    }

    fn control(&mut self, model: &RobotModel, state: &RobotState, _time: f64) -> Result<ControlOutput, ControllerError> {
        let dynamics = Dynamics::compute(model, state, &self.contacts, &GRAVITY);
        let h = balance_hierarchy_with(model, state, &self.contacts, &dynamics, &self.config, &self.reference)?;
        solve_cycle(h, dynamics, self.contacts.clone(), self.reference.com.position, None)
    }
}
