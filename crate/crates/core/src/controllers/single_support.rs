use super::*;
use crate::model::GRAVITY;
use crate::tasks::{
    build_acceleration_limit_rows, build_contact_constraint, build_cop_rows, build_dynamics_constraint,
    build_force_regularizer, build_friction_rows, build_momentum_task, build_torque_limit_rows,
    default_force_targets, MomentumForm, MomentumRows,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    DoubleSupport,
    Unloading,
    SingleSupport,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::DoubleSupport => "double_support",
            Phase::Unloading => "unloading",
            Phase::SingleSupport => "single_support",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState {
    pub phase: Phase,
    /// Time spent in the current phase, s.
    pub elapsed: f64,
    /// Index of the swing foot in the plan's contact set.
    pub swing: usize,
    /// Consecutive cycles with the predicted swing-foot normal force below
    /// the unloading threshold.
    pub unloaded_cycles: usize,
    pub last_swing_force: Option<f64>,
    /// Swing-foot pose when the contact was released.
    pub swing_start: Option<(Matrix3<f64>, Vector3<f64>)>,
}

impl PhaseState {
    pub fn start(swing: usize) -> Self {
        Self {
            phase: Phase::DoubleSupport,
            elapsed: 0.0,
            swing,
            unloaded_cycles: 0,
            last_swing_force: None,
            swing_start: None,
        }
    }

    /// Feeds back the swing-foot normal force predicted by the last solve.
    pub fn record_swing_force(&mut self, normal_force: f64, config: &ControllerConfig) {
        self.last_swing_force = Some(normal_force);
        if self.phase == Phase::Unloading {
            if normal_force <= config.phases.unload_force {
                self.unloaded_cycles += 1;
            } else {
                self.unloaded_cycles = 0;
            }
        }
    }

    fn enter(&mut self, phase: Phase) {
        self.phase = phase;
        self.elapsed = 0.0;
        self.unloaded_cycles = 0;
    }
}

/// Fixed data of a single-support maneuver.
#[derive(Clone, Debug)]
pub struct SingleSupportPlan {
    /// Both feet; index `swing` is released in single support.
    pub contacts: ContactSet,
    pub swing: usize,
    pub stance: usize,
    pub com_start: Vector3<f64>,
    /// Stance-foot frame origin projected to the initial CoM height.
    pub com_target: Vector3<f64>,
    pub posture: PostureReference,
}

impl SingleSupportPlan {
    pub fn new(
        model: &RobotModel,
        initial: &RobotState,
        contacts: ContactSet,
        swing: usize,
    ) -> Result<Self, ControllerError> {
        if contacts.contacts.len() != 2 || swing > 1 {
            return Err(ControllerError::Configuration(
                "single-support plan needs two feet and a swing index of 0 or 1".into(),
            ));
        }
        let stance = 1 - swing;
        let com_start = center_of_mass(model, initial);
        let (_, foot) = frame_pose(model, initial, contacts.contacts[stance].frame);
        Ok(Self {
            contacts,
            swing,
            stance,
            com_start,
            com_target: Vector3::new(foot.x, foot.y, com_start.z),
            posture: PostureReference::from_state(initial),
        })
    }

    /// Contacts assumed in `phase`.
    pub fn active_contacts(&self, phase: Phase) -> ContactSet {
        let mut out = self.contacts.clone();
        for c in &mut out.contacts {
            c.active = true;
        }
        if phase == Phase::SingleSupport {
            out.contacts[self.swing].active = false;
        }
        out
    }

    pub fn com_reference(&self, state: &PhaseState, config: &ControllerConfig) -> ComReference {
        match state.phase {
            Phase::DoubleSupport => {
                let (s, ds, dds) = quintic(state.elapsed, config.phases.shift_duration);
                let delta = self.com_target - self.com_start;
                ComReference {
                    position: self.com_start + delta * s,
                    velocity: delta * ds,
                    acceleration: delta * dds,
                }
            }
            _ => ComReference::fixed(self.com_target),
        }
    }
}

/// Applies any phase transition that is due before the next cycle.
pub fn advance_phase(
    phase: &PhaseState,
    model: &RobotModel,
    state: &RobotState,
    plan: &SingleSupportPlan,
    config: &ControllerConfig,
) -> PhaseState {
    let mut next = phase.clone();
    let p = &config.phases;
    match phase.phase {
        Phase::DoubleSupport => {
            if phase.elapsed >= p.shift_duration {
                let error = center_of_mass(model, state) - plan.com_target;
                let horizontal = error.x.hypot(error.y);
                if horizontal <= p.shift_tolerance || phase.elapsed >= p.shift_duration + p.shift_timeout {
                    next.enter(Phase::Unloading);
                }
            }
        }
        Phase::Unloading => {
            if phase.unloaded_cycles >= p.unload_cycles || phase.elapsed >= p.unload_timeout {
                next.enter(Phase::SingleSupport);
                next.swing_start = Some(frame_pose(model, state, plan.contacts.contacts[plan.swing].frame));
            }
        }
        Phase::SingleSupport => {}
    }
    next
}

/// Hierarchy of `phase` without any transition logic.
pub fn phase_hierarchy(
    phase: &PhaseState,
    model: &RobotModel,
    state: &RobotState,
    dynamics: &Dynamics,
    plan: &SingleSupportPlan,
    config: &ControllerConfig,
) -> Result<Hierarchy, ControllerError> {
    config.check()?;
    let contacts = plan.active_contacts(phase.phase);
    let c = contacts.active_count();
    let layout = reduced_or_full(model.dof(), c, config);

    let mut level1 = build_dynamics_constraint(dynamics, &layout)?;
    level1.append(build_torque_limit_rows(model, dynamics, &layout)?);

    let mut level2 = build_cop_rows(dynamics, &contacts, &layout, config.cop_margin)?;
    level2.append(build_friction_rows(dynamics, &contacts, &layout)?);
    level2.append(build_acceleration_limit_rows(model, state, &layout, config.dt)?);

    let com_ref = plan.com_reference(phase, config);
    let hd_ref = momentum_reference(dynamics, config, &com_ref);
    let mut level3 = build_momentum_task(
        dynamics,
        &hd_ref,
        &layout,
        MomentumForm::Kinematic,
        MomentumRows::All,
        config.weights.momentum,
    )?;
    level3.append(build_contact_constraint(dynamics, &layout)?.scaled(config.weights.contact));
    if phase.phase == Phase::SingleSupport {
        let frame = plan.contacts.contacts[plan.swing].frame;
        let (rotation, position) = phase
            .swing_start
            .unwrap_or_else(|| frame_pose(model, state, frame));
        let (s, ds, dds) = quintic(phase.elapsed, config.phases.swing_duration);
        let lift = Vector3::z() * config.phases.swing_height;
        let reference = FrameReference {
            rotation,
            position: position + lift * s,
            velocity: lift * ds,
            acceleration: lift * dds,
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
    level3.append(posture_task(state, &plan.posture, config, &layout, false)?);

    let m = dynamics.total_mass;
    let targets = match phase.phase {
        Phase::DoubleSupport => static_force_targets(dynamics, &default_force_targets(2, m, &dynamics.gravity), &[true; 2]),
        Phase::Unloading => {
            let s = (phase.elapsed / config.phases.unload_ramp.max(config.dt)).min(1.0);
            let mut nominal = default_force_targets(2, m, &dynamics.gravity);
            nominal[plan.swing][2] *= 1.0 - s;
            let mut free = [true; 2];
            free[plan.swing] = false;
            static_force_targets(dynamics, &nominal, &free)
        }
        Phase::SingleSupport => static_force_targets(dynamics, &default_force_targets(1, m, &dynamics.gravity), &[true]),
    };
    let level4 = build_force_regularizer(dynamics, &layout, &targets, config.weights.regularizer)?;
    Ok(finish(vec![level1, level2, level3, level4], layout, dynamics))
}

/// One cycle of the contact-switching state machine: applies a due
/// transition, emits the hierarchy of the resulting phase and advances the
/// phase clock by `dt`.
pub fn single_support_step(
    phase: &PhaseState,
    model: &RobotModel,
    state: &RobotState,
    plan: &SingleSupportPlan,
    config: &ControllerConfig,
) -> Result<(Hierarchy, PhaseState), ControllerError> {
    let current = advance_phase(phase, model, state, plan, config);
    let contacts = plan.active_contacts(current.phase);
    let dynamics = Dynamics::compute(model, state, &contacts, &GRAVITY);
    let h = phase_hierarchy(&current, model, state, &dynamics, plan, config)?;
    let mut next = current;
    next.elapsed += config.dt;
    Ok((h, next))
}

/// Normal force on contact slot `slot` of a solution, in the contact frame.
pub fn contact_normal_force(solution: &CascadeSolution, dynamics: &Dynamics, slot: usize) -> f64 {
    let start = solution.layout.lambda().start + 6 * slot;
    let f = Vector3::new(solution.y_star[start], solution.y_star[start + 1], solution.y_star[start + 2]);
    (dynamics.contact_poses[slot].0.transpose() * f).z
}

/// Closed-loop single-support balancer.
#[derive(Clone, Debug)]
pub struct SingleSupportController {
    pub config: ControllerConfig,
    pub plan: SingleSupportPlan,
    pub phase: PhaseState,
    /// `(time, phase)` at every phase entry.
    pub transitions: Vec<(f64, Phase)>,
}

impl SingleSupportController {
    pub fn new(
        model: &RobotModel,
        initial: &RobotState,
        config: ControllerConfig,
        swing: usize,
    ) -> Result<Self, ControllerError> {
        config.check()?;
        let contacts = foot_contacts(model, &config)?;
        Ok(Self {
            plan: SingleSupportPlan::new(model, initial, contacts, swing)?,
            phase: PhaseState::start(swing),
            transitions: vec![(0.0, Phase::DoubleSupport)],
            config,
        })
    }
}

impl Controller for SingleSupportController {
    fn name(&self) -> &str {
        "single_support"
    }

    fn config(&self) -> &ControllerConfig {
        &self.config
    }

    fn control(&mut self, model: &RobotModel, state: &RobotState, time: f64) -> Result<ControlOutput, ControllerError> {
        let current = advance_phase(&self.phase, model, state, &self.plan, &self.config);
        if current.phase != self.phase.phase {
            self.transitions.push((time, current.phase));
        }
        let contacts = self.plan.active_contacts(current.phase);
        let dynamics = Dynamics::compute(model, state, &contacts, &GRAVITY);
        let h = phase_hierarchy(&current, model, state, &dynamics, &self.plan, &self.config)?;
        let com_ref = self.plan.com_reference(&current, &self.config).position;
        let out = solve_cycle(h, dynamics, contacts, com_ref, Some(current.phase))?;
        let mut next = current;
        if next.phase != Phase::SingleSupport {
            let force = contact_normal_force(&out.solution, &out.dynamics, self.plan.swing);
            next.record_swing_force(force, &self.config);
        }
        next.elapsed += self.config.dt;
        self.phase = next;
        Ok(out)
    }
}
