//! Recursive rigid-body algorithms on a floating-base tree.
//!
//! All spatial quantities live in inertial-frame Plücker coordinates (see
//! [`crate::spatial`]), so composite inertias can be accumulated by plain
//! addition and joint motion subspaces need no transforms.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3};

use super::{joint_placement, ContactSet, JointType, RobotModel, RobotState};
use crate::spatial::{
    cross_force, cross_motion, from_parts, inertia_at_origin, linear, angular, SpatialMat,
    SpatialVec,
};

/// Per-link placement and inertia for one configuration.
#[derive(Clone, Debug)]
pub struct Kinematics {
    pub rotations: Vec<Matrix3<f64>>,
    pub origins: Vec<Vector3<f64>>,
    pub coms: Vec<Vector3<f64>>,
    pub inertias: Vec<SpatialMat>,
    /// Motion subspace of joint `j` (moving link `j + 1`).
    pub joint_subspaces: Vec<SpatialVec>,
    /// Columns map the base velocity coordinates `[v; ω]` to a spatial velocity.
    pub base_subspace: Matrix6<f64>,
}

impl Kinematics {
    pub fn compute(model: &RobotModel, state: &RobotState) -> Self {
        let links = model.links();
        let nl = links.len();
        let mut rotations = Vec::with_capacity(nl);
        let mut origins = Vec::with_capacity(nl);
        let mut joint_subspaces = Vec::with_capacity(nl - 1);

        rotations.push(state.base_rotation());
        origins.push(state.base_position);
        for (j, joint) in model.joints().iter().enumerate() {
            let i = j + 1;
            let p = links[i].parent.expect("non-root link has a parent");
            let (r_rel, t_rel) = joint_placement(joint, state.joints[j]);
            let r_parent = rotations[p];
            let o_parent = origins[p];
            let axis_world = r_parent * joint.origin_rotation * joint.axis;
            let s = match joint.kind {
                JointType::Revolute => {
                    let o = o_parent + r_parent * joint.origin_translation;
                    from_parts(&axis_world, &o.cross(&axis_world))
                }
                JointType::Prismatic => from_parts(&Vector3::zeros(), &axis_world),
            };
            rotations.push(r_parent * r_rel);
            origins.push(o_parent + r_parent * t_rel);
            joint_subspaces.push(s);
        }

        let mut coms = Vec::with_capacity(nl);
        let mut inertias = Vec::with_capacity(nl);
        for (i, link) in links.iter().enumerate() {
            let c = origins[i] + rotations[i] * link.com;
            let i_world = rotations[i] * link.inertia * rotations[i].transpose();
            coms.push(c);
            inertias.push(inertia_at_origin(link.mass, &c, &i_world));
        }

        let pb = state.base_position;
        let mut base_subspace = Matrix6::zeros();
        for k in 0..3 {
            let e = Vector3::ith(k, 1.0);
            base_subspace
                .set_column(k, &from_parts(&Vector3::zeros(), &e));
            base_subspace.set_column(3 + k, &from_parts(&e, &pb.cross(&e)));
        }

        Self {
            rotations,
            origins,
            coms,
            inertias,
            joint_subspaces,
            base_subspace,
        }
    }

    /// Spatial velocity of every link for generalized velocity `v`.
    pub fn velocities(&self, model: &RobotModel, v: &DVector<f64>) -> Vec<SpatialVec> {
        let n = model.dof();
        let mut out = Vec::with_capacity(model.links().len());
        out.push(self.base_subspace * v.fixed_rows::<6>(n));
        for (j, s) in self.joint_subspaces.iter().enumerate() {
            let p = model.links()[j + 1].parent.unwrap();
            let vp = out[p];
            out.push(vp + s * v[j]);
        }
        out
    }

    /// Composite inertia of the subtree rooted at every link.
    pub fn composite_inertias(&self, model: &RobotModel) -> Vec<SpatialMat> {
        let mut ic = self.inertias.clone();
        for i in (1..ic.len()).rev() {
            let p = model.links()[i].parent.unwrap();
            let child = ic[i];
            ic[p] += child;
        }
        ic
    }

    pub fn com(&self, model: &RobotModel) -> (Vector3<f64>, f64) {
        let mut total = 0.0;
        let mut acc = Vector3::zeros();
        for (link, c) in model.links().iter().zip(&self.coms) {
            total += link.mass;
            acc += c * link.mass;
        }
        (acc / total, total)
    }

    pub fn frame_pose(&self, model: &RobotModel, frame: usize) -> (Matrix3<f64>, Vector3<f64>) {
        let f = &model.frames()[frame];
        let r = self.rotations[f.link];
        (r * f.rotation, self.origins[f.link] + r * f.translation)
    }

    /// 6×(n+6) Jacobian `[linear; angular]` of the point `point` (inertial
    /// coordinates) rigidly attached to `link`.
    pub fn point_jacobian(&self, model: &RobotModel, link: usize, point: &Vector3<f64>) -> DMatrix<f64> {
        let n = model.dof();
        let mut jac = DMatrix::zeros(6, n + 6);
        let mut put = |col: usize, s: &SpatialVec| {
            let w = angular(s);
            let lin = linear(s) + w.cross(point);
            for r in 0..3 {
                jac[(r, col)] = lin[r];
                jac[(3 + r, col)] = w[r];
            }
        };
        let mut i = link;
        while i != 0 {
            put(i - 1, &self.joint_subspaces[i - 1]);
            i = model.links()[i].parent.unwrap();
        }
        for k in 0..6 {
            put(n + k, &self.base_subspace.column(k).into_owned());
        }
        jac
    }
}

/// Joint-space inertia matrix via the composite-rigid-body algorithm.
pub fn mass_matrix(model: &RobotModel, state: &RobotState) -> DMatrix<f64> {
    let kin = Kinematics::compute(model, state);
    mass_matrix_from(model, &kin)
}

fn mass_matrix_from(model: &RobotModel, kin: &Kinematics) -> DMatrix<f64> {
    let n = model.dof();
    let links = model.links();
    let ic = kin.composite_inertias(model);
    let s0 = &kin.base_subspace;
    let mut m = DMatrix::zeros(n + 6, n + 6);
    for i in (1..links.len()).rev() {
        let di = i - 1;
        let s = &kin.joint_subspaces[di];
        let f = ic[i] * s;
        m[(di, di)] = s.dot(&f);
        let mut j = links[i].parent.unwrap();
        while j != 0 {
            let v = kin.joint_subspaces[j - 1].dot(&f);
            m[(j - 1, di)] = v;
            m[(di, j - 1)] = v;
            j = links[j].parent.unwrap();
        }
        let base = s0.transpose() * f;
        for k in 0..6 {
            m[(n + k, di)] = base[k];
            m[(di, n + k)] = base[k];
        }
    }
    let base_block = s0.transpose() * ic[0] * s0;
    m.view_mut((n, n), (6, 6)).copy_from(&base_block);
    m
}

/// Generalized forces `M(q)q̈ + N(q, q̇)` from the recursive Newton-Euler algorithm.
pub fn inverse_dynamics(
    model: &RobotModel,
    state: &RobotState,
    qdd: &DVector<f64>,
    gravity: &Vector3<f64>,
) -> DVector<f64> {
    let kin = Kinematics::compute(model, state);
    rnea(model, &kin, state, qdd, gravity)
}

/// Coriolis, centrifugal and gravity forces `N(q, q̇)`.
pub fn nonlinear_effects(model: &RobotModel, state: &RobotState, gravity: &Vector3<f64>) -> DVector<f64> {
    inverse_dynamics(model, state, &DVector::zeros(model.dim()), gravity)
}

/// Link spatial velocities and accelerations for `qdd`, with gravity folded
/// into the base acceleration.
fn forward_pass(
    model: &RobotModel,
    kin: &Kinematics,
    state: &RobotState,
    qdd: &DVector<f64>,
    gravity: &Vector3<f64>,
) -> (Vec<SpatialVec>, Vec<SpatialVec>) {
    let n = model.dof();
    let links = model.links();
    let qd = &state.velocity;
    let vb = state.base_linear_velocity();
    let wb = state.base_angular_velocity();

    let mut vel = Vec::with_capacity(links.len());
    let mut acc = Vec::with_capacity(links.len());
    vel.push(kin.base_subspace * qd.fixed_rows::<6>(n));
    // Base subspace drift: the angular columns depend on the base position.
    let base_bias = from_parts(&Vector3::zeros(), &vb.cross(&wb));
    acc.push(
        kin.base_subspace * qdd.fixed_rows::<6>(n) + base_bias
            - from_parts(&Vector3::zeros(), gravity),
    );
    for j in 0..n {
        let i = j + 1;
        let p = links[i].parent.unwrap();
        let s = &kin.joint_subspaces[j];
        let vi = vel[p] + s * qd[j];
        let ai = acc[p] + s * qdd[j] + cross_motion(&vi, &(s * qd[j]));
        vel.push(vi);
        acc.push(ai);
    }
    (vel, acc)
}

fn rnea(
    model: &RobotModel,
    kin: &Kinematics,
    state: &RobotState,
    qdd: &DVector<f64>,
    gravity: &Vector3<f64>,
) -> DVector<f64> {
    let (vel, acc) = forward_pass(model, kin, state, qdd, gravity);
    backward_pass(model, kin, &vel, &acc)
}

fn backward_pass(model: &RobotModel, kin: &Kinematics, vel: &[SpatialVec], acc: &[SpatialVec]) -> DVector<f64> {
    let n = model.dof();
    let links = model.links();
    let mut force: Vec<SpatialVec> = (0..links.len())
        .map(|i| {
            let iv = kin.inertias[i] * vel[i];
            kin.inertias[i] * acc[i] + cross_force(&vel[i], &iv)
        })
        .collect();
    let mut tau = DVector::zeros(n + 6);
    for i in (1..links.len()).rev() {
        tau[i - 1] = kin.joint_subspaces[i - 1].dot(&force[i]);
        let p = links[i].parent.unwrap();
        let fi = force[i];
        force[p] += fi;
    }
    let base = kin.base_subspace.transpose() * force[0];
    tau.rows_mut(n, 6).copy_from(&base);
    tau
}

/// Classical acceleration `[linear; angular]` of a point fixed to a link,
/// given the link's spatial velocity and acceleration.
fn point_acceleration(vel: &SpatialVec, acc: &SpatialVec, point: &Vector3<f64>) -> [Vector3<f64>; 2] {
    let w = angular(vel);
    let alpha = angular(acc);
    let point_vel = linear(vel) + w.cross(point);
    [linear(acc) + alpha.cross(point) + w.cross(&point_vel), alpha]
}

/// `J̇_c q̇` for the active contacts.
fn contact_drift(
    model: &RobotModel,
    kin: &Kinematics,
    contacts: &ContactSet,
    vel: &[SpatialVec],
    acc: &[SpatialVec],
) -> DVector<f64> {
    let active: Vec<_> = contacts.active().collect();
    let mut out = DVector::zeros(6 * active.len());
    for (k, c) in active.iter().enumerate() {
        let (_, p) = kin.frame_pose(model, c.frame);
        let link = model.frames()[c.frame].link;
        let [lin, ang] = point_acceleration(&vel[link], &acc[link], &p);
        out.fixed_rows_mut::<3>(6 * k).copy_from(&lin);
        out.fixed_rows_mut::<3>(6 * k + 3).copy_from(&ang);
    }
    out
}

/// `Ḣ_G q̇`: the momentum rate at zero acceleration without gravity equals the
/// external wrench the base would have to supply, moved to the CoM.
fn centroidal_drift(model: &RobotModel, kin: &Kinematics, state: &RobotState, base_wrench: &DVector<f64>) -> DVector<f64> {
    let n = model.dof();
    let (g, _) = kin.com(model);
    let force = Vector3::new(base_wrench[n], base_wrench[n + 1], base_wrench[n + 2]);
    let moment = Vector3::new(base_wrench[n + 3], base_wrench[n + 4], base_wrench[n + 5]);
    let about_com = moment + (state.base_position - g).cross(&force);
    DVector::from_vec(vec![force.x, force.y, force.z, about_com.x, about_com.y, about_com.z])
}

/// Pose `(rotation, position)` of a named frame in the inertial frame.
pub fn frame_pose(model: &RobotModel, state: &RobotState, frame: usize) -> (Matrix3<f64>, Vector3<f64>) {
    Kinematics::compute(model, state).frame_pose(model, frame)
}

/// 6×(n+6) Jacobian `[linear; angular]` of a frame origin.
pub fn frame_jacobian(model: &RobotModel, state: &RobotState, frame: usize) -> DMatrix<f64> {
    let kin = Kinematics::compute(model, state);
    let (_, p) = kin.frame_pose(model, frame);
    kin.point_jacobian(model, model.frames()[frame].link, &p)
}

/// Jacobian `[linear; angular]` of a frame origin and its drift `J̇q̇`.
pub fn frame_motion(model: &RobotModel, state: &RobotState, frame: usize) -> ContactJacobian {
    let kin = Kinematics::compute(model, state);
    let (_, p) = kin.frame_pose(model, frame);
    let link = model.frames()[frame].link;
    let matrix = kin.point_jacobian(model, link, &p);
    let zero = DVector::zeros(model.dim());
    let (vel, acc) = forward_pass(model, &kin, state, &zero, &Vector3::zeros());
    let [lin, ang] = point_acceleration(&vel[link], &acc[link], &p);
    let drift = DVector::from_iterator(6, lin.iter().chain(ang.iter()).copied());
    ContactJacobian { matrix, drift }
}

/// Stacked contact Jacobians of the active contacts with their drift `J̇_c q̇`.
#[derive(Clone, Debug)]
pub struct ContactJacobian {
    pub matrix: DMatrix<f64>,
    pub drift: DVector<f64>,
}

fn stacked_contact_jacobian(model: &RobotModel, kin: &Kinematics, contacts: &ContactSet) -> DMatrix<f64> {
    let active: Vec<_> = contacts.active().collect();
    let mut out = DMatrix::zeros(6 * active.len(), model.dim());
    for (k, c) in active.iter().enumerate() {
        let (_, p) = kin.frame_pose(model, c.frame);
        let jac = kin.point_jacobian(model, model.frames()[c.frame].link, &p);
        out.rows_mut(6 * k, 6).copy_from(&jac);
    }
    out
}

pub fn contact_jacobian(model: &RobotModel, state: &RobotState, contacts: &ContactSet) -> ContactJacobian {
    let kin = Kinematics::compute(model, state);
    let matrix = stacked_contact_jacobian(model, &kin, contacts);
    let zero = DVector::zeros(model.dim());
    let (vel, acc) = forward_pass(model, &kin, state, &zero, &Vector3::zeros());
    let drift = contact_drift(model, &kin, contacts, &vel, &acc);
    ContactJacobian { matrix, drift }
}

/// Centroidal momentum matrix `H_G`, momentum `h = H_G q̇ = [h_lin; h_ang]`
/// about the CoM, and the drift `Ḣ_G q̇`.
#[derive(Clone, Debug)]
pub struct CentroidalMomentum {
    pub matrix: DMatrix<f64>,
    pub momentum: DVector<f64>,
    pub drift: DVector<f64>,
}

fn centroidal_matrix(model: &RobotModel, kin: &Kinematics) -> DMatrix<f64> {
    let n = model.dof();
    let ic = kin.composite_inertias(model);
    let (g, _) = kin.com(model);
    let mut out = DMatrix::zeros(6, n + 6);
    let mut put = |col: usize, f: &SpatialVec| {
        let l_o = angular(f);
        let p = linear(f);
        let l_g = l_o - g.cross(&p);
        for r in 0..3 {
            out[(r, col)] = p[r];
            out[(3 + r, col)] = l_g[r];
        }
    };
    for j in 0..n {
        put(j, &(ic[j + 1] * kin.joint_subspaces[j]));
    }
    let base = ic[0] * kin.base_subspace;
    for k in 0..6 {
        put(n + k, &base.column(k).into_owned());
    }
    out
}

pub fn centroidal_momentum(model: &RobotModel, state: &RobotState) -> CentroidalMomentum {
    let kin = Kinematics::compute(model, state);
    let matrix = centroidal_matrix(model, &kin);
    let momentum = &matrix * &state.velocity;
    let zero = DVector::zeros(model.dim());
    let bias = rnea(model, &kin, state, &zero, &Vector3::zeros());
    let drift = centroidal_drift(model, &kin, state, &bias);
    CentroidalMomentum {
        matrix,
        momentum,
        drift,
    }
}

/// Centre of mass in the inertial frame and total mass.
pub fn com(model: &RobotModel, state: &RobotState) -> (Vector3<f64>, f64) {
    Kinematics::compute(model, state).com(model)
}

/// Every dynamics quantity a control cycle needs, from one set of passes.
#[derive(Clone, Debug)]
pub struct Dynamics {
    pub mass_matrix: DMatrix<f64>,
    pub nonlinear: DVector<f64>,
    pub contact: ContactJacobian,
    pub centroidal: CentroidalMomentum,
    pub com: Vector3<f64>,
    pub total_mass: f64,
    /// `(rotation, position)` of every active contact frame.
    pub contact_poses: Vec<(Matrix3<f64>, Vector3<f64>)>,
    pub gravity: Vector3<f64>,
    pub kinematics: Kinematics,
}

impl Dynamics {
    pub fn compute(
        model: &RobotModel,
        state: &RobotState,
        contacts: &ContactSet,
        gravity: &Vector3<f64>,
    ) -> Self {
        let kin = Kinematics::compute(model, state);
        let mass_matrix = mass_matrix_from(model, &kin);
        let nonlinear = rnea(model, &kin, state, &DVector::zeros(model.dim()), gravity);
        let jc = stacked_contact_jacobian(model, &kin, contacts);
        let hg = centroidal_matrix(model, &kin);

        let zero = DVector::zeros(model.dim());
        let (vel, acc) = forward_pass(model, &kin, state, &zero, &Vector3::zeros());
        let contact_drift = contact_drift(model, &kin, contacts, &vel, &acc);
        let bias = backward_pass(model, &kin, &vel, &acc);
        let momentum_drift = centroidal_drift(model, &kin, state, &bias);

        let (com, total_mass) = kin.com(model);
        let contact_poses = contacts
            .active()
            .map(|c| kin.frame_pose(model, c.frame))
            .collect();
        Self {
            mass_matrix,
            nonlinear,
            contact: ContactJacobian {
                drift: contact_drift,
                matrix: jc,
            },
            centroidal: CentroidalMomentum {
                momentum: &hg * &state.velocity,
                drift: momentum_drift,
                matrix: hg,
            },
            com,
            total_mass,
            contact_poses,
            gravity: *gravity,
            kinematics: kin,
        }
    }
}
