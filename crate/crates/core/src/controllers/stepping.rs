use super::*;
use crate::model::GRAVITY;
use crate::tasks::{
    build_acceleration_limit_rows, build_contact_constraint, build_cop_rows, build_dynamics_constraint,
    build_force_regularizer, build_friction_rows, build_momentum_task, build_torque_limit_rows,
    default_force_targets, MomentumForm, MomentumRows,
};

/// Feet in contact during a stepping cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "support")]
pub enum SupportPattern {
    Double,
    /// `swing` indexes the left (0) or right (1) sole.
    Single { swing: usize },
}

impl SupportPattern {
    pub fn contacts(&self, feet: &ContactSet) -> Result<ContactSet, ControllerError> {
        let mut out = feet.clone();
        for c in &mut out.contacts {
            c.active = true;
        }
        if let SupportPattern::Single { swing } = *self {
            let slot = out.contacts.get_mut(swing).ok_or_else(|| {
                ControllerError::Configuration(format!("swing index {swing} out of range"))
            })?;
            slot.active = false;
        }
        Ok(out)
    }
}

/// Five priorities of the stepping benchmark: dynamics and torque limits;
/// contact set and acceleration limits; CoM PD with swing-foot tracking;
/// posture; force regularization. Built for the layout in `config`.
pub fn stepping_hierarchy(
    model: &RobotModel,
    state: &RobotState,
    feet: &ContactSet,
    config: &ControllerConfig,
    support: SupportPattern,
    com_ref: &ComReference,
    posture: &PostureReference,
) -> Result<Hierarchy, ControllerError> {
    config.check()?;
    let contacts = support.contacts(feet)?;
    let dynamics = Dynamics::compute(model, state, &contacts, &GRAVITY);
    let c = contacts.active_count();
    let layout = reduced_or_full(model.dof(), c, config);

    let mut level1 = build_dynamics_constraint(&dynamics, &layout)?;
    level1.append(build_torque_limit_rows(model, &dynamics, &layout)?);

    let mut level2 = build_contact_constraint(&dynamics, &layout)?;
    level2.append(build_cop_rows(&dynamics, &contacts, &layout, config.cop_margin)?);
    level2.append(build_friction_rows(&dynamics, &contacts, &layout)?);
    level2.append(build_acceleration_limit_rows(model, state, &layout, config.dt)?);

    let hd_ref = com_force_reference(&dynamics, config, com_ref);
    let mut level3 = build_momentum_task(
        &dynamics,
        &hd_ref,
        &layout,
        MomentumForm::Kinematic,
        MomentumRows::Linear,
        config.weights.com,
    )?;
    if let SupportPattern::Single { swing } = support {
        let frame = feet.contacts[swing].frame;
        let (rotation, position) = frame_pose(model, state, frame);
        let reference = FrameReference {
            rotation,
            position: position + Vector3::z() * config.phases.swing_height,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
        };
        level3.append(frame_task(
            "swing_foot",
            model,
            state,
            frame,
            &reference,
            config.swing,
            config.weights.swing,
            &layout,
        )?);
    }
    let level4 = posture_task(state, posture, config, &layout, true)?;
    let targets = static_force_targets(
        &dynamics,
        &default_force_targets(c, dynamics.total_mass, &dynamics.gravity),
        &vec![true; c],
    );
    let level5 = build_force_regularizer(&dynamics, &layout, &targets, config.weights.regularizer)?;
    Ok(finish(vec![level1, level2, level3, level4, level5], layout, &dynamics))
}

/// The same stepping hierarchy in the full and in the reduced formulation,
/// holding the current CoM and posture.
pub fn stepping_benchmark_hierarchy(
    model: &RobotModel,
    state: &RobotState,
    config: &ControllerConfig,
    support: SupportPattern,
) -> Result<(Hierarchy, Hierarchy), ControllerError> {
    let feet = foot_contacts(model, config)?;
    let com_ref = ComReference::fixed(center_of_mass(model, state));
    let posture = PostureReference::from_state(state);
    let full = ControllerConfig {
        formulation: Formulation::Full,
        ..config.clone()
    };
    let reduced = ControllerConfig {
        formulation: Formulation::Reduced,
        ..config.clone()
    };
    Ok((
        stepping_hierarchy(model, state, &feet, &full, support, &com_ref, &posture)?,
        stepping_hierarchy(model, state, &feet, &reduced, support, &com_ref, &posture)?,
    ))
}
