//! Floating-base rigid-body model, state and contact descriptions.

pub mod builtin;
mod description;
mod dynamics;

pub use description::{
    BodyDescription, FrameDescription, JointDescription, JointType, LimitsDescription,
    LinkDescription, ModelDescription, OriginDescription,
};
pub use dynamics::{
    centroidal_momentum, com, contact_jacobian, frame_jacobian, frame_motion, frame_pose, inverse_dynamics,
    mass_matrix, nonlinear_effects, CentroidalMomentum, ContactJacobian, Dynamics, Kinematics,
};

use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::spatial::{axis_angle, rpy_to_matrix};

/// Standard gravity used by the controllers and the simulator.
pub const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model description parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("structural error: {0}")]
    Structure(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("unknown frame `{0}`")]
    UnknownFrame(String),
    #[error("state does not match model: {0}")]
    State(String),
}

#[derive(Clone, Debug)]
pub struct Link {
    pub name: String,
    pub parent: Option<usize>,
    pub mass: f64,
    /// CoM offset in link coordinates.
    pub com: Vector3<f64>,
    /// Rotational inertia about the CoM in link axes.
    pub inertia: Matrix3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointLimits {
    pub q_min: f64,
    pub q_max: f64,
    pub tau_min: f64,
    pub tau_max: f64,
}

#[derive(Clone, Debug)]
pub struct Joint {
    pub name: String,
    pub kind: JointType,
    /// Unit axis in the joint frame.
    pub axis: Vector3<f64>,
    /// Fixed placement of the joint frame in the parent link frame.
    pub origin_rotation: Matrix3<f64>,
    pub origin_translation: Vector3<f64>,
    pub limits: JointLimits,
}

#[derive(Clone, Debug)]
pub struct Frame {
    pub name: String,
    pub link: usize,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Kinematic tree with a 6-DoF floating root.
///
/// Links are stored in topological order: link 0 is the floating base and
/// link `i > 0` is moved by joint `i - 1`. Generalized coordinates are
/// ordered `[joints; base]`, the base block being `[linear; angular]`
/// velocity of the base origin in inertial-frame axes.
#[derive(Clone, Debug)]
pub struct RobotModel {
    name: String,
    links: Vec<Link>,
    joints: Vec<Joint>,
    frames: Vec<Frame>,
}

impl RobotModel {
    pub fn from_description(desc: &ModelDescription) -> Result<Self, ModelError> {
        let mut names = std::collections::HashMap::new();
        names.insert(desc.base.name.clone(), usize::MAX);
        for (i, link) in desc.links.iter().enumerate() {
            if names.insert(link.name.clone(), i).is_some() {
                return Err(ModelError::Structure(format!(
                    "duplicate link name `{}`",
                    link.name
                )));
            }
        }
        let mut parent_of = Vec::with_capacity(desc.links.len());
        for link in &desc.links {
            match names.get(&link.parent) {
                Some(&p) => parent_of.push(p),
                None => {
                    return Err(ModelError::Structure(format!(
                        "link `{}` is attached to nonexistent parent `{}`",
                        link.name, link.parent
                    )))
                }
            }
        }

        // Breadth-first ordering from the base; anything unreachable sits on a cycle.
        let mut order: Vec<usize> = Vec::with_capacity(desc.links.len());
        let mut frontier = vec![usize::MAX];
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &p in &frontier {
                for (i, &parent) in parent_of.iter().enumerate() {
                    if parent == p {
                        order.push(i);
                        next.push(i);
                    }
                }
            }
            frontier = next;
        }
        if order.len() != desc.links.len() {
            let stuck: Vec<&str> = (0..desc.links.len())
                .filter(|i| !order.contains(i))
                .map(|i| desc.links[i].name.as_str())
                .collect();
            return Err(ModelError::Structure(format!(
                "links do not form a tree rooted at the base (cycle through {})",
                stuck.join(", ")
            )));
        }

        let mut index_of = std::collections::HashMap::new();
        index_of.insert(desc.base.name.clone(), 0usize);
        for (pos, &i) in order.iter().enumerate() {
            index_of.insert(desc.links[i].name.clone(), pos + 1);
        }

        let mut links = vec![body_to_link(&desc.base.name, None, desc.base.mass, &desc.base.com, &desc.base.inertia)?];
        let mut joints = Vec::with_capacity(order.len());
        for &i in &order {
            let l = &desc.links[i];
            let parent = index_of[&l.parent];
            links.push(body_to_link(&l.name, Some(parent), l.mass, &l.com, &l.inertia)?);
            joints.push(joint_from(&l.joint)?);
        }

        let mut frames = Vec::with_capacity(desc.frames.len());
        for f in &desc.frames {
            let link = *index_of.get(&f.link).ok_or_else(|| {
                ModelError::Structure(format!(
                    "frame `{}` references nonexistent link `{}`",
                    f.name, f.link
                ))
            })?;
            frames.push(Frame {
                name: f.name.clone(),
                link,
                rotation: rpy_to_matrix(&Vector3::from(f.rpy)),
                translation: Vector3::from(f.xyz),
            });
        }

        Ok(Self {
            name: desc.name.clone(),
            links,
            joints,
            frames,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of actuated joints.
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Dimension of the generalized velocity, `n + 6`.
    pub fn dim(&self) -> usize {
        self.joints.len() + 6
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame_index(&self, name: &str) -> Result<usize, ModelError> {
        self.frames
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| ModelError::UnknownFrame(name.to_string()))
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    /// Generalized-velocity column of the joint moving `link`, or `None` for the base.
    pub fn dof_of_link(&self, link: usize) -> Option<usize> {
        link.checked_sub(1)
    }

    /// `S` in `Sᵀτ`: selects the first `n` generalized coordinates.
    pub fn actuation_selector(&self) -> DMatrix<f64> {
        let n = self.dof();
        let mut s = DMatrix::zeros(n, n + 6);
        s.view_mut((0, 0), (n, n)).fill_with_identity();
        s
    }

    pub fn torque_limits(&self) -> (DVector<f64>, DVector<f64>) {
        (
            DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.limits.tau_min)),
            DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.limits.tau_max)),
        )
    }

    /// Copy of the model with every link mass (and inertia) scaled by the
    /// matching factor. Used to emulate model error in robustness studies.
    pub fn with_scaled_masses(&self, factors: &[f64]) -> Result<Self, ModelError> {
        if factors.len() != self.links.len() {
            return Err(ModelError::Parameter(format!(
                "expected {} mass factors, got {}",
                self.links.len(),
                factors.len()
            )));
        }
        let mut out = self.clone();
        for (link, &k) in out.links.iter_mut().zip(factors) {
            if k <= 0.0 {
                return Err(ModelError::Parameter("mass factor must be positive".into()));
            }
            link.mass *= k;
            link.inertia *= k;
        }
        Ok(out)
    }
}

fn body_to_link(
    name: &str,
    parent: Option<usize>,
    mass: f64,
    com: &[f64; 3],
    inertia: &[f64; 6],
) -> Result<Link, ModelError> {
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(ModelError::Parameter(format!(
            "link `{name}` must have positive finite mass, got {mass}"
        )));
    }
    let [ixx, iyy, izz, ixy, ixz, iyz] = *inertia;
    let tensor = Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz);
    if tensor.cholesky().is_none() {
        return Err(ModelError::Parameter(format!(
            "inertia of link `{name}` is not positive definite"
        )));
    }
    Ok(Link {
        name: name.to_string(),
        parent,
        mass,
        com: Vector3::from(*com),
        inertia: tensor,
    })
}

fn joint_from(j: &JointDescription) -> Result<Joint, ModelError> {
    let axis = Vector3::from(j.axis);
    let norm = axis.norm();
    if !(norm > 1e-9) || !norm.is_finite() {
        return Err(ModelError::Parameter(format!("joint `{}` has a zero axis", j.name)));
    }
    let [q_lo, q_hi] = j.limits.position;
    let [t_lo, t_hi] = j.limits.effort;
    let limits = JointLimits {
        q_min: q_lo.unwrap_or(f64::NEG_INFINITY),
        q_max: q_hi.unwrap_or(f64::INFINITY),
        tau_min: t_lo.unwrap_or(f64::NEG_INFINITY),
        tau_max: t_hi.unwrap_or(f64::INFINITY),
    };
    if limits.q_min > limits.q_max || limits.tau_min > limits.tau_max {
        return Err(ModelError::Parameter(format!(
            "joint `{}` has inverted limits",
            j.name
        )));
    }
    Ok(Joint {
        name: j.name.clone(),
        kind: j.kind,
        axis: axis / norm,
        origin_rotation: rpy_to_matrix(&Vector3::from(j.origin.rpy)),
        origin_translation: Vector3::from(j.origin.xyz),
        limits,
    })
}

/// Parses a JSON model description and builds the model.
pub fn build_model(text: &str) -> Result<RobotModel, ModelError> {
    let desc: ModelDescription = serde_json::from_str(text).map_err(|e| ModelError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    RobotModel::from_description(&desc)
}

/// Generalized position and velocity of a floating-base robot.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotState {
    pub joints: DVector<f64>,
    pub base_position: Vector3<f64>,
    pub base_orientation: UnitQuaternion<f64>,
    /// `[q̇_j; v_base; ω_base]`, base twist in inertial-frame axes.
    pub velocity: DVector<f64>,
}

impl RobotState {
    pub fn zero(model: &RobotModel) -> Self {
        Self {
            joints: DVector::zeros(model.dof()),
            base_position: Vector3::zeros(),
            base_orientation: UnitQuaternion::identity(),
            velocity: DVector::zeros(model.dim()),
        }
    }

    pub fn check(&self, model: &RobotModel) -> Result<(), ModelError> {
        if self.joints.len() != model.dof() || self.velocity.len() != model.dim() {
            return Err(ModelError::State(format!(
                "expected {} joints and {} velocities, got {} and {}",
                model.dof(),
                model.dim(),
                self.joints.len(),
                self.velocity.len()
            )));
        }
        if (self.base_orientation.quaternion().norm() - 1.0).abs() > 1e-9 {
            return Err(ModelError::State("base quaternion is not unit".into()));
        }
        let finite = self.joints.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.base_position.iter().all(|v| v.is_finite());
        if !finite {
            return Err(ModelError::State("non-finite state".into()));
        }
        Ok(())
    }

    /// Configuration reached by following generalized velocity `v` for `dt`
    /// seconds (velocity unchanged). The base rotates about the inertial-frame
    /// angular velocity, so this is an exact exponential step on SO(3).
    pub fn integrate_configuration(&self, v: &DVector<f64>, dt: f64) -> Self {
        let n = self.joints.len();
        let mut out = self.clone();
        for i in 0..n {
            out.joints[i] += v[i] * dt;
        }
        let lin = Vector3::new(v[n], v[n + 1], v[n + 2]);
        let ang = Vector3::new(v[n + 3], v[n + 4], v[n + 5]);
        out.base_position += lin * dt;
        let delta = UnitQuaternion::from_scaled_axis(ang * dt);
        out.base_orientation = delta * self.base_orientation;
        out.base_orientation.renormalize();
        out
    }

    /// Configuration advanced along the state's own velocity.
    pub fn advanced(&self, dt: f64) -> Self {
        self.integrate_configuration(&self.velocity, dt)
    }

    pub fn base_rotation(&self) -> Matrix3<f64> {
        *self.base_orientation.to_rotation_matrix().matrix()
    }

    pub fn base_linear_velocity(&self) -> Vector3<f64> {
        let n = self.joints.len();
        self.velocity.fixed_rows::<3>(n).into_owned()
    }

    pub fn base_angular_velocity(&self) -> Vector3<f64> {
        let n = self.joints.len();
        self.velocity.fixed_rows::<3>(n + 3).into_owned()
    }

    pub fn joint_velocities(&self) -> DVector<f64> {
        self.velocity.rows(0, self.joints.len()).into_owned()
    }
}

/// A flat end-effector contact with a rectangular support polygon.
///
/// Extents are measured from the frame origin along the frame's x and y
/// axes; the frame z axis is the contact normal.
#[derive(Clone, Debug, PartialEq)]
pub struct Contact {
    pub name: String,
    pub frame: usize,
    pub x_forward: f64,
    pub x_backward: f64,
    pub y_left: f64,
    pub y_right: f64,
    pub friction: f64,
    pub active: bool,
}

impl Contact {
    /// Rectangular foot centred on the frame origin.
    pub fn centered(
        model: &RobotModel,
        frame: &str,
        length: f64,
        width: f64,
        friction: f64,
    ) -> Result<Self, ModelError> {
        let contact = Self {
            name: frame.to_string(),
            frame: model.frame_index(frame)?,
            x_forward: 0.5 * length,
            x_backward: 0.5 * length,
            y_left: 0.5 * width,
            y_right: 0.5 * width,
            friction,
            active: true,
        };
        contact.check()?;
        Ok(contact)
    }

    pub fn check(&self) -> Result<(), ModelError> {
        let extents = [self.x_forward, self.x_backward, self.y_left, self.y_right];
        if extents.iter().any(|e| !(*e > 0.0)) {
            return Err(ModelError::Parameter(format!(
                "contact `{}` must have positive polygon extents",
                self.name
            )));
        }
        if !(self.friction > 0.0) {
            return Err(ModelError::Parameter(format!(
                "contact `{}` must have positive friction",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContactSet {
    pub contacts: Vec<Contact>,
}

impl ContactSet {
    pub fn new(contacts: Vec<Contact>) -> Self {
        Self { contacts }
    }

    pub fn active(&self) -> impl Iterator<Item = &Contact> {
        self.contacts.iter().filter(|c| c.active)
    }

    pub fn active_count(&self) -> usize {
        self.active().count()
    }

    pub fn with_active(&self, name: &str, active: bool) -> Self {
        let mut out = self.clone();
        for c in &mut out.contacts {
            if c.name == name {
                c.active = active;
            }
        }
        out
    }
}

/// Rigid placement of joint `joint` at position `q` in its parent frame.
pub(crate) fn joint_placement(joint: &Joint, q: f64) -> (Matrix3<f64>, Vector3<f64>) {
    match joint.kind {
        JointType::Revolute => (
            joint.origin_rotation * axis_angle(&joint.axis, q),
            joint.origin_translation,
        ),
        JointType::Prismatic => (
            joint.origin_rotation,
            joint.origin_translation + joint.origin_rotation * joint.axis * q,
        ),
    }
}
