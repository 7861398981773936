//! Post-solve consistency checks.

use nalgebra::{DVector, Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::{CascadeSolution, Hierarchy, LevelStatus};
use crate::model::{ContactSet, Dynamics, RobotModel, RobotState};
use crate::tasks::{
    acceleration_bounds, build_dynamics_constraint, shrunk_polygon, torque_map, AffineTaskSet,
    Formulation, TaskError, TorqueMap, VariableLayout,
};

#[derive(Clone, Debug)]
pub struct ContactGeometry {
    pub name: String,
    /// Contact frame orientation in the inertial frame.
    pub rotation: Matrix3<f64>,
    /// Margin-shrunk polygon `(x_forward, x_backward, y_left, y_right)`.
    pub polygon: [f64; 4],
    pub friction: f64,
}

/// Physical quantities a solution is checked against.
#[derive(Clone, Debug)]
pub struct PhysicalContext {
    /// Newton-Euler rows over `[q̈; λ]`.
    pub newton_euler: AffineTaskSet,
    pub torque_map: TorqueMap,
    pub contacts: Vec<ContactGeometry>,
    pub torque_min: DVector<f64>,
    pub torque_max: DVector<f64>,
    pub accel_min: DVector<f64>,
    pub accel_max: DVector<f64>,
}

impl PhysicalContext {
    pub fn new(
        model: &RobotModel,
        state: &RobotState,
        dynamics: &Dynamics,
        contacts: &ContactSet,
        cop_margin: f64,
        dt: f64,
    ) -> Result<Self, TaskError> {
        let layout = VariableLayout::new(model.dof(), contacts.active_count(), Formulation::Reduced);
        let geometry = contacts
            .active()
            .zip(&dynamics.contact_poses)
            .map(|(c, (rotation, _))| {
                Ok(ContactGeometry {
                    name: c.name.clone(),
                    rotation: *rotation,
                    polygon: shrunk_polygon(c, cop_margin)?,
                    friction: c.friction,
                })
            })
            .collect::<Result<Vec<_>, TaskError>>()?;
        let (torque_min, torque_max) = model.torque_limits();
        let (accel_min, accel_max) = acceleration_bounds(model, state, dt);
        Ok(Self {
            newton_euler: build_dynamics_constraint(dynamics, &layout)?,
            torque_map: torque_map(dynamics),
            contacts: geometry,
            torque_min,
            torque_max,
            accel_min,
            accel_max,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AuditTolerances {
    /// Newton-Euler residual, N and N·m.
    pub newton_euler: f64,
    /// Inequality constraints (CoP, friction, boxes).
    pub constraint: f64,
    /// Higher-level caps `Āy + ā ≤ v*`.
    pub cap: f64,
}

impl Default for AuditTolerances {
    fn default() -> Self {
        Self {
            newton_euler: 1e-8,
            constraint: 1e-6,
            cap: 1e-7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuditFlag {
    LevelStatus { level: usize, status: LevelStatus },
    CapViolation { level: usize, amount: f64 },
    NewtonEuler { residual: f64 },
    TorqueMap { residual: f64 },
    CopOutside { contact: String, x: f64, y: f64, excess: f64 },
    Friction { contact: String, excess: f64 },
    Unilaterality { contact: String, normal_force: f64 },
    TorqueLimit { joint: usize, excess: f64 },
    AccelerationLimit { joint: usize, excess: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelAudit {
    pub level: usize,
    pub status: LevelStatus,
    pub eq_residual_norm: f64,
    pub ineq_slack_norm: f64,
    pub cap_violation: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PhysicalAudit {
    pub newton_euler_residual: f64,
    /// CoP per contact in contact-frame coordinates (`None` without load).
    pub cops: Vec<Option<(f64, f64)>>,
    /// Contact-frame normal force per contact.
    pub normal_forces: Vec<f64>,
    /// `μ/√2·f_z − max(|f_x|, |f_y|)` per contact.
    pub friction_margins: Vec<f64>,
    /// Largest amount by which the CoP rows are exceeded (≤ 0 inside).
    pub cop_excess: Vec<f64>,
    pub torque_violation: f64,
    pub acceleration_violation: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AuditReport {
    pub levels: Vec<LevelAudit>,
    pub physical: Option<PhysicalAudit>,
    pub flags: Vec<AuditFlag>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.flags.is_empty()
    }
}

/// Checks a solution against its hierarchy and, if given, the physics.
pub fn audit_solution(
    hierarchy: &Hierarchy,
    solution: &CascadeSolution,
    physical: Option<&PhysicalContext>,
    tolerances: &AuditTolerances,
) -> AuditReport {
    let mut report = AuditReport::default();
    let y = &solution.y_star;
    for (index, (level, sol)) in hierarchy.levels.iter().zip(&solution.levels).enumerate() {
        let (eq, ineq) = level.evaluate(y);
        let eq = eq.component_mul(&level.eq_weights);
        let ineq = ineq.component_mul(&level.ineq_weights);
        let cap_violation = if ineq.is_empty() {
            0.0
        } else {
            (&ineq - &sol.v).max().max(0.0)
        };
        let number = index + 1;
        if matches!(sol.status, LevelStatus::Infeasible | LevelStatus::MaxIter) {
            report.flags.push(AuditFlag::LevelStatus {
                level: number,
                status: sol.status,
            });
        }
        if cap_violation > tolerances.cap {
            report.flags.push(AuditFlag::CapViolation {
                level: number,
                amount: cap_violation,
            });
        }
        report.levels.push(LevelAudit {
            level: number,
            status: sol.status,
            eq_residual_norm: eq.norm(),
            ineq_slack_norm: ineq.map(|v| v.max(0.0)).norm(),
            cap_violation,
        });
    }
    if let Some(ctx) = physical {
        report.physical = Some(audit_physics(solution, ctx, tolerances, &mut report.flags));
    }
    report
}

fn audit_physics(
    solution: &CascadeSolution,
    ctx: &PhysicalContext,
    tol: &AuditTolerances,
    flags: &mut Vec<AuditFlag>,
) -> PhysicalAudit {
    let layout = &solution.layout;
    let n = layout.n;
    let qdd_lambda = solution.y_star.rows(0, layout.motion_force_dim()).into_owned();
    let mut out = PhysicalAudit::default();

    let (ne, _) = ctx.newton_euler.evaluate(&qdd_lambda);
    out.newton_euler_residual = ne.amax();
    if out.newton_euler_residual > tol.newton_euler {
        flags.push(AuditFlag::NewtonEuler {
            residual: out.newton_euler_residual,
        });
    }

    let mapped = ctx.torque_map.apply(&qdd_lambda);
    let tau = solution.torques.clone().unwrap_or_else(|| mapped.clone());
    let map_residual = (&tau - &mapped).amax();
    if map_residual > tol.newton_euler * (1.0 + mapped.amax()) {
        flags.push(AuditFlag::TorqueMap { residual: map_residual });
    }

    let lambda = layout.lambda().start;
    for (k, contact) in ctx.contacts.iter().enumerate() {
        let world = Vector6::from_iterator(qdd_lambda.rows(lambda + 6 * k, 6).iter().copied());
        let rt = contact.rotation.transpose();
        let f: Vector3<f64> = rt * world.fixed_rows::<3>(0);
        let m: Vector3<f64> = rt * world.fixed_rows::<3>(3);
        let [xf, xb, yl, yr] = contact.polygon;
        out.normal_forces.push(f.z);
        if f.z < -tol.constraint {
            flags.push(AuditFlag::Unilaterality {
                contact: contact.name.clone(),
                normal_force: f.z,
            });
        }
        let excess = [-m.y - xf * f.z, m.y - xb * f.z, m.x - yl * f.z, -m.x - yr * f.z]
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        out.cop_excess.push(excess);
        let cop = (f.z > 0.0).then(|| (-m.y / f.z, m.x / f.z));
        out.cops.push(cop);
        if excess > tol.constraint {
            let (x, y) = cop.unwrap_or((f64::NAN, f64::NAN));
            flags.push(AuditFlag::CopOutside {
                contact: contact.name.clone(),
                x,
                y,
                excess,
            });
        }
        let margin = contact.friction / std::f64::consts::SQRT_2 * f.z - f.x.abs().max(f.y.abs());
        out.friction_margins.push(margin);
        if margin < -tol.constraint {
            flags.push(AuditFlag::Friction {
                contact: contact.name.clone(),
                excess: -margin,
            });
        }
    }

    for i in 0..n {
        let excess = (tau[i] - ctx.torque_max[i]).max(ctx.torque_min[i] - tau[i]);
        out.torque_violation = out.torque_violation.max(excess.max(0.0));
        if excess > tol.constraint {
            flags.push(AuditFlag::TorqueLimit { joint: i, excess });
        }
        let qdd = qdd_lambda[i];
        let excess = (qdd - ctx.accel_max[i]).max(ctx.accel_min[i] - qdd);
        out.acceleration_violation = out.acceleration_violation.max(excess.max(0.0));
        if excess > tol.constraint {
            flags.push(AuditFlag::AccelerationLimit { joint: i, excess });
        }
    }
    out
}
