use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::{AffineTaskSet, Formulation, TaskError, TorqueMap, VariableLayout};
use crate::model::{Contact, ContactSet, Dynamics, RobotModel, RobotState};
use crate::spatial::skew;

/// Lookahead of the joint-limit acceleration bound, in control periods.
pub const ACCEL_HORIZON_STEPS: f64 = 10.0;
/// Magnitude cap on joint-acceleration bounds, rad/s² (or m/s²).
pub const ACCEL_CAP: f64 = 500.0;
pub const DEFAULT_COP_MARGIN: f64 = 0.01;

fn check_layout(dynamics: &Dynamics, layout: &VariableLayout) -> Result<(), TaskError> {
    let n = dynamics.mass_matrix.nrows() - 6;
    let c = dynamics.contact.matrix.nrows() / 6;
    if n != layout.n || c != layout.c {
        return Err(TaskError::Layout(format!(
            "layout has n={}, c={} but dynamics has n={n}, c={c}",
            layout.n, layout.c
        )));
    }
    Ok(())
}

fn active_contacts<'a>(contacts: &'a ContactSet, layout: &VariableLayout) -> Result<Vec<&'a Contact>, TaskError> {
    let active: Vec<&Contact> = contacts.active().collect();
    if active.len() != layout.c {
        return Err(TaskError::Layout(format!(
            "{} active contacts but layout expects {}",
            active.len(),
            layout.c
        )));
    }
    Ok(active)
}

/// `τ = [M_u | −J_{c,u}ᵀ] [q̈; λ] + N_u`.
pub fn torque_map(dynamics: &Dynamics) -> TorqueMap {
    let n = dynamics.mass_matrix.nrows() - 6;
    let k = dynamics.contact.matrix.nrows();
    let mut matrix = DMatrix::zeros(n, n + 6 + k);
    matrix
        .columns_mut(0, n + 6)
        .copy_from(&dynamics.mass_matrix.rows(0, n));
    matrix
        .columns_mut(n + 6, k)
        .copy_from(&(-dynamics.contact.matrix.columns(0, n).transpose()));
    TorqueMap {
        matrix,
        offset: dynamics.nonlinear.rows(0, n).into_owned(),
    }
}

/// Equations of motion `M q̈ + N = J_cᵀ λ + Sᵀ τ`.
///
/// The reduced formulation keeps only the six unactuated (Newton-Euler)
/// rows; the full formulation keeps all `n + 6` rows over `[q̈; λ; τ]`.
pub fn build_dynamics_constraint(dynamics: &Dynamics, layout: &VariableLayout) -> Result<AffineTaskSet, TaskError> {
    check_layout(dynamics, layout)?;
    let n = layout.n;
    let k = 6 * layout.c;
    let jct = dynamics.contact.matrix.transpose();
    match layout.mode {
        Formulation::Reduced => {
            let mut b = DMatrix::zeros(6, layout.dim());
            b.columns_mut(0, n + 6)
                .copy_from(&dynamics.mass_matrix.rows(n, 6));
            b.columns_mut(n + 6, k).copy_from(&(-jct.rows(n, 6)));
            Ok(AffineTaskSet::equality(
                "newton_euler",
                b,
                dynamics.nonlinear.rows(n, 6).into_owned(),
                1.0,
            ))
        }
        Formulation::Full => {
            let mut b = DMatrix::zeros(n + 6, layout.dim());
            b.columns_mut(0, n + 6).copy_from(&dynamics.mass_matrix);
            b.columns_mut(n + 6, k).copy_from(&(-jct));
            let tau = layout.tau().start;
            for i in 0..n {
                b[(i, tau + i)] = -1.0;
            }
            Ok(AffineTaskSet::equality(
                "equations_of_motion",
                b,
                dynamics.nonlinear.clone(),
                1.0,
            ))
        }
    }
}

/// Torque box `τ_min ≤ τ ≤ τ_max`; infinite bounds emit no row. Upper-bound
/// rows come first, then lower-bound rows.
pub fn build_torque_limit_rows(
    model: &RobotModel,
    dynamics: &Dynamics,
    layout: &VariableLayout,
) -> Result<AffineTaskSet, TaskError> {
    check_layout(dynamics, layout)?;
    let (lo, hi) = model.torque_limits();
    let n = layout.n;
    let mut rows: Vec<(usize, f64, f64)> = Vec::new();
    for i in 0..n {
        if hi[i].is_finite() {
            rows.push((i, 1.0, -hi[i]));
        }
    }
    for i in 0..n {
        if lo[i].is_finite() {
            rows.push((i, -1.0, lo[i]));
        }
    }
    let mut a = DMatrix::zeros(rows.len(), layout.dim());
    let mut v = DVector::zeros(rows.len());
    match layout.mode {
        Formulation::Full => {
            let tau = layout.tau().start;
            for (r, &(i, s, off)) in rows.iter().enumerate() {
                a[(r, tau + i)] = s;
                v[r] = off;
            }
        }
        Formulation::Reduced => {
            let map = torque_map(dynamics);
            for (r, &(i, s, off)) in rows.iter().enumerate() {
                a.row_mut(r).copy_from(&(map.matrix.row(i) * s));
                v[r] = off + s * map.offset[i];
            }
        }
    }
    Ok(AffineTaskSet::inequality("torque_limits", a, v, 1.0))
}

/// Joint-acceleration bounds from the distance to the position limits.
///
/// With horizon `h = 10·dt`, the largest acceleration that stops short of the
/// upper limit is `2(q_max − q − q̇h)/h²`, clamped to `[0, cap]`; the lower
/// bound mirrors it on `[−cap, 0]`. Unbounded joints get `±cap`.
pub fn acceleration_bounds(model: &RobotModel, state: &RobotState, dt: f64) -> (DVector<f64>, DVector<f64>) {
    let n = model.dof();
    let h = ACCEL_HORIZON_STEPS * dt;
    let mut lo = DVector::zeros(n);
    let mut hi = DVector::zeros(n);
    for (i, joint) in model.joints().iter().enumerate() {
        let q = state.joints[i];
        let qd = state.velocity[i];
        let upper = 2.0 * (joint.limits.q_max - q - qd * h) / (h * h);
        let lower = 2.0 * (joint.limits.q_min - q - qd * h) / (h * h);
        hi[i] = if upper.is_nan() { ACCEL_CAP } else { upper.clamp(0.0, ACCEL_CAP) };
        lo[i] = if lower.is_nan() { -ACCEL_CAP } else { lower.clamp(-ACCEL_CAP, 0.0) };
    }
    (lo, hi)
}

/// `2n` rows `q̈_min ≤ q̈_joint ≤ q̈_max` (upper rows first).
pub fn build_acceleration_limit_rows(
    model: &RobotModel,
    state: &RobotState,
    layout: &VariableLayout,
    dt: f64,
) -> Result<AffineTaskSet, TaskError> {
    if !(dt > 0.0) {
        return Err(TaskError::Configuration(format!("control period must be positive, got {dt}")));
    }
    let n = layout.n;
    if model.dof() != n {
        return Err(TaskError::Layout("model and layout disagree on n".into()));
    }
    let (lo, hi) = acceleration_bounds(model, state, dt);
    let mut a = DMatrix::zeros(2 * n, layout.dim());
    let mut v = DVector::zeros(2 * n);
    for i in 0..n {
        a[(i, i)] = 1.0;
        v[i] = -hi[i];
        a[(n + i, i)] = -1.0;
        v[n + i] = lo[i];
    }
    Ok(AffineTaskSet::inequality("acceleration_limits", a, v, 1.0))
}

/// Torque box followed by the joint-acceleration box.
pub fn build_limit_rows(
    model: &RobotModel,
    state: &RobotState,
    dynamics: &Dynamics,
    layout: &VariableLayout,
    dt: f64,
) -> Result<AffineTaskSet, TaskError> {
    let mut out = build_torque_limit_rows(model, dynamics, layout)?;
    out.append(build_acceleration_limit_rows(model, state, layout, dt)?);
    Ok(out)
}

/// `J_c q̈ + J̇_c q̇ = 0`: the active contacts do not move.
pub fn build_contact_constraint(dynamics: &Dynamics, layout: &VariableLayout) -> Result<AffineTaskSet, TaskError> {
    check_layout(dynamics, layout)?;
    let k = 6 * layout.c;
    let mut b = DMatrix::zeros(k, layout.dim());
    b.columns_mut(0, layout.n + 6).copy_from(&dynamics.contact.matrix);
    Ok(AffineTaskSet::equality(
        "contact",
        b,
        dynamics.contact.drift.clone(),
        1.0,
    ))
}

/// Linear map from the world-frame contact wrench `[f; n]` to the same
/// wrench in contact-frame axes.
fn to_local(rotation: &Matrix3<f64>) -> Matrix6<f64> {
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation.transpose());
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&rotation.transpose());
    out
}

/// Support polygon shrunk by `margin`: `(x_forward, x_backward, y_left, y_right)`.
pub fn shrunk_polygon(contact: &Contact, margin: f64) -> Result<[f64; 4], TaskError> {
    let e = [
        contact.x_forward - margin,
        contact.x_backward - margin,
        contact.y_left - margin,
        contact.y_right - margin,
    ];
    if !(e[0] + e[1] > 0.0 && e[2] + e[3] > 0.0) {
        return Err(TaskError::Configuration(format!(
            "support polygon of `{}` has no area after a {margin} m margin",
            contact.name
        )));
    }
    Ok(e)
}

/// Per contact: four rows keeping the CoP inside the shrunk polygon, in the
/// order front, back, left, right. With `p = (−n_y, n_x)/f_z` in the contact
/// frame the rows read `−n_y − X⁺f_z ≤ 0`, `n_y − X⁻f_z ≤ 0`,
/// `n_x − Y⁺f_z ≤ 0`, `−n_x − Y⁻f_z ≤ 0`. Adding the front and back rows
/// gives `f_z ≥ 0`, so unilaterality needs no row of its own.
pub fn build_cop_rows(
    dynamics: &Dynamics,
    contacts: &ContactSet,
    layout: &VariableLayout,
    margin: f64,
) -> Result<AffineTaskSet, TaskError> {
    check_layout(dynamics, layout)?;
    let active = active_contacts(contacts, layout)?;
    let mut a = DMatrix::zeros(4 * layout.c, layout.dim());
    let lambda = layout.lambda().start;
    for (k, contact) in active.iter().enumerate() {
        let [xf, xb, yl, yr] = shrunk_polygon(contact, margin)?;
        // Coefficients over the local wrench [fx, fy, fz, nx, ny, nz].
        let local = [
            [0.0, 0.0, -xf, 0.0, -1.0, 0.0],
            [0.0, 0.0, -xb, 0.0, 1.0, 0.0],
            [0.0, 0.0, -yl, 1.0, 0.0, 0.0],
            [0.0, 0.0, -yr, -1.0, 0.0, 0.0],
        ];
        let t = to_local(&dynamics.contact_poses[k].0);
        for (r, coeffs) in local.iter().enumerate() {
            let row = nalgebra::RowVector6::from_row_slice(coeffs) * t;
            a.view_mut((4 * k + r, lambda + 6 * k), (1, 6)).copy_from(&row);
        }
    }
    let rows = a.nrows();
    Ok(AffineTaskSet::inequality("cop", a, DVector::zeros(rows), 1.0))
}

/// Per contact: the inscribed friction pyramid `|f_x|, |f_y| ≤ μ f_z / √2`
/// in contact-frame axes (rows +x, −x, +y, −y).
pub fn build_friction_rows(
    dynamics: &Dynamics,
    contacts: &ContactSet,
    layout: &VariableLayout,
) -> Result<AffineTaskSet, TaskError> {
    check_layout(dynamics, layout)?;
    let active = active_contacts(contacts, layout)?;
    let mut a = DMatrix::zeros(4 * layout.c, layout.dim());
    let lambda = layout.lambda().start;
    for (k, contact) in active.iter().enumerate() {
        let mu = contact.friction / std::f64::consts::SQRT_2;
        let local = [
            [1.0, 0.0, -mu, 0.0, 0.0, 0.0],
            [-1.0, 0.0, -mu, 0.0, 0.0, 0.0],
            [0.0, 1.0, -mu, 0.0, 0.0, 0.0],
            [0.0, -1.0, -mu, 0.0, 0.0, 0.0],
        ];
        let t = to_local(&dynamics.contact_poses[k].0);
        for (r, coeffs) in local.iter().enumerate() {
            let row = nalgebra::RowVector6::from_row_slice(coeffs) * t;
            a.view_mut((4 * k + r, lambda + 6 * k), (1, 6)).copy_from(&row);
        }
    }
    let rows = a.nrows();
    Ok(AffineTaskSet::inequality("friction", a, DVector::zeros(rows), 1.0))
}

/// Contact constraint, CoP rows and friction rows.
pub fn build_contact_rows(
    dynamics: &Dynamics,
    contacts: &ContactSet,
    layout: &VariableLayout,
    cop_margin: f64,
) -> Result<AffineTaskSet, TaskError> {
    let mut out = build_contact_constraint(dynamics, layout)?;
    out.append(build_cop_rows(dynamics, contacts, layout, cop_margin)?);
    out.append(build_friction_rows(dynamics, contacts, layout)?);
    Ok(out)
}

/// `J_x q̈ + J̇_x q̇ − ẍ_ref = 0`.
pub fn build_motion_task(
    name: &str,
    jacobian: &DMatrix<f64>,
    drift: &DVector<f64>,
    xdd_ref: &DVector<f64>,
    layout: &VariableLayout,
    weight: f64,
) -> Result<AffineTaskSet, TaskError> {
    let k = jacobian.nrows();
    if jacobian.ncols() != layout.n + 6 || drift.len() != k || xdd_ref.len() != k {
        return Err(TaskError::Layout(format!(
            "motion task `{name}`: jacobian {}x{}, drift {}, reference {}",
            jacobian.nrows(),
            jacobian.ncols(),
            drift.len(),
            xdd_ref.len()
        )));
    }
    let mut b = DMatrix::zeros(k, layout.dim());
    b.columns_mut(0, layout.n + 6).copy_from(jacobian);
    Ok(AffineTaskSet::equality(name, b, drift - xdd_ref, weight))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentumForm {
    /// `ḣ = H_G q̈ + Ḣ_G q̇` over the acceleration columns.
    Kinematic,
    /// `ḣ = Σ D_i λ_i + [m g; 0]` over the contact-force columns.
    Force,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentumRows {
    All,
    /// Linear momentum only (CoM tasks).
    Linear,
}

/// Contact wrench about the contact point mapped to the momentum rate about
/// the CoM: `D_i = [[I, 0], [(x_i − x_G)×, I]]`.
pub fn contact_momentum_map(contact_position: &Vector3<f64>, com: &Vector3<f64>) -> Matrix6<f64> {
    let mut d = Matrix6::identity();
    d.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&skew(&(contact_position - com)));
    d
}

/// Six (or three, linear only) equality rows driving the centroidal momentum
/// rate to `hd_ref`.
pub fn build_momentum_task(
    dynamics: &Dynamics,
    hd_ref: &Vector6<f64>,
    layout: &VariableLayout,
    form: MomentumForm,
    rows: MomentumRows,
    weight: f64,
) -> Result<AffineTaskSet, TaskError> {
    check_layout(dynamics, layout)?;
    if hd_ref.iter().any(|v| !v.is_finite()) {
        return Err(TaskError::Configuration("momentum reference is not finite".into()));
    }
    let mut b = DMatrix::zeros(6, layout.dim());
    let mut v = DVector::zeros(6);
    match form {
        MomentumForm::Kinematic => {
            b.columns_mut(0, layout.n + 6)
                .copy_from(&dynamics.centroidal.matrix);
            v.copy_from(&dynamics.centroidal.drift);
        }
        MomentumForm::Force => {
            let lambda = layout.lambda().start;
            for (k, (_, p)) in dynamics.contact_poses.iter().enumerate() {
                let d = contact_momentum_map(p, &dynamics.com);
                b.view_mut((0, lambda + 6 * k), (6, 6)).copy_from(&d);
            }
            let weight_force = dynamics.gravity * dynamics.total_mass;
            v.fixed_rows_mut::<3>(0).copy_from(&weight_force);
        }
    }
    v -= DVector::from_column_slice(hd_ref.as_slice());
    let name = match form {
        MomentumForm::Kinematic => "momentum",
        MomentumForm::Force => "momentum_force",
    };
    let count = match rows {
        MomentumRows::All => 6,
        MomentumRows::Linear => 3,
    };
    Ok(AffineTaskSet::equality(
        name,
        b.rows(0, count).into_owned(),
        v.rows(0, count).into_owned(),
        weight,
    ))
}

/// Momentum-rate reference `ḣ_ref = P [m(x_des − x_G); 0] + D (h_des − h) + ḣ_des`.
#[allow(clippy::too_many_arguments)]
pub fn momentum_pd_reference(
    com: &Vector3<f64>,
    com_des: &Vector3<f64>,
    momentum: &Vector6<f64>,
    momentum_des: &Vector6<f64>,
    momentum_rate_des: &Vector6<f64>,
    p: &Matrix6<f64>,
    d: &Matrix6<f64>,
    total_mass: f64,
) -> Vector6<f64> {
    let offset = (com_des - com) * total_mass;
    let position = Vector6::new(offset.x, offset.y, offset.z, 0.0, 0.0, 0.0);
    p * position + d * (momentum_des - momentum) + momentum_rate_des
}

/// Target contact-frame wrench per active contact: zero tangential force and
/// moments, the weight shared evenly in the normal direction.
pub fn default_force_targets(c: usize, total_mass: f64, gravity: &Vector3<f64>) -> Vec<Vector6<f64>> {
    if c == 0 {
        return Vec::new();
    }
    let normal = total_mass * gravity.norm() / c as f64;
    vec![Vector6::new(0.0, 0.0, normal, 0.0, 0.0, 0.0); c]
}

/// `6c` rows driving each contact wrench, expressed in its contact frame,
/// toward `targets`.
pub fn build_force_regularizer(
    dynamics: &Dynamics,
    layout: &VariableLayout,
    targets: &[Vector6<f64>],
    weight: f64,
) -> Result<AffineTaskSet, TaskError> {
    check_layout(dynamics, layout)?;
    if targets.len() != layout.c {
        return Err(TaskError::Layout(format!(
            "{} wrench targets for {} contacts",
            targets.len(),
            layout.c
        )));
    }
    let k = 6 * layout.c;
    let mut b = DMatrix::zeros(k, layout.dim());
    let mut v = DVector::zeros(k);
    let lambda = layout.lambda().start;
    for (i, target) in targets.iter().enumerate() {
        let t = to_local(&dynamics.contact_poses[i].0);
        b.view_mut((6 * i, lambda + 6 * i), (6, 6)).copy_from(&t);
        v.rows_mut(6 * i, 6).copy_from(&(-target));
    }
    Ok(AffineTaskSet::equality("force_regularizer", b, v, weight))
}

/// World-frame wrench of contact `k` re-expressed in its contact frame.
pub fn local_wrench(dynamics: &Dynamics, k: usize, world: &Vector6<f64>) -> Vector6<f64> {
    to_local(&dynamics.contact_poses[k].0) * world
}

/// CoP of a contact-frame wrench in contact-frame coordinates, or `None`
/// when the normal force does not push.
pub fn center_of_pressure(local: &Vector6<f64>) -> Option<(f64, f64)> {
    if local[2] <= 0.0 {
        return None;
    }
    Some((-local[4] / local[2], local[3] / local[2]))
}
