//! Spatial (6D) vector algebra in Plücker coordinates.
//!
//! Motion vectors are stored as `[angular; linear]` and force vectors as
//! `[moment; force]`, both referred to the origin of the inertial frame.
//! Keeping every quantity in one fixed frame means the recursive algorithms
//! never need per-link coordinate transforms.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

pub type SpatialVec = Vector6<f64>;
pub type SpatialMat = Matrix6<f64>;

/// Skew-symmetric matrix such that `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[inline]
pub fn angular(v: &SpatialVec) -> Vector3<f64> {
    v.fixed_rows::<3>(0).into_owned()
}

#[inline]
pub fn linear(v: &SpatialVec) -> Vector3<f64> {
    v.fixed_rows::<3>(3).into_owned()
}

#[inline]
pub fn from_parts(top: &Vector3<f64>, bottom: &Vector3<f64>) -> SpatialVec {
    Vector6::new(top.x, top.y, top.z, bottom.x, bottom.y, bottom.z)
}

/// Motion cross product `v ×ₘ m`.
pub fn cross_motion(v: &SpatialVec, m: &SpatialVec) -> SpatialVec {
    let (w, vo) = (angular(v), linear(v));
    let (mw, mv) = (angular(m), linear(m));
    from_parts(&w.cross(&mw), &(w.cross(&mv) + vo.cross(&mw)))
}

/// Force cross product `v ×_f f`.
pub fn cross_force(v: &SpatialVec, f: &SpatialVec) -> SpatialVec {
    let (w, vo) = (angular(v), linear(v));
    let (n, fl) = (angular(f), linear(f));
    from_parts(&(w.cross(&n) + vo.cross(&fl)), &w.cross(&fl))
}

/// Spatial inertia about the inertial origin of a body with mass `mass`,
/// centre of mass `com` and rotational inertia `inertia_com` about the CoM,
/// all expressed in inertial-frame axes.
pub fn inertia_at_origin(mass: f64, com: &Vector3<f64>, inertia_com: &Matrix3<f64>) -> SpatialMat {
    let c = skew(com);
    let mut out = SpatialMat::zeros();
    out.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(inertia_com - mass * c * c));
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(mass * c));
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-mass * c));
    out.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(Matrix3::identity() * mass));
    out
}

/// Rotation matrix from roll-pitch-yaw (applied as Rz(yaw) Ry(pitch) Rx(roll)).
pub fn rpy_to_matrix(rpy: &Vector3<f64>) -> Matrix3<f64> {
    *nalgebra::Rotation3::from_euler_angles(rpy.x, rpy.y, rpy.z).matrix()
}

/// Rotation about a unit axis.
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let unit = nalgebra::Unit::new_unchecked(*axis);
    *nalgebra::Rotation3::from_axis_angle(&unit, angle).matrix()
}

/// Rotation vector (axis times angle) of `r`; inverse of `axis_angle`.
pub fn rotation_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
    nalgebra::UnitQuaternion::from_rotation_matrix(&rot).scaled_axis()
}
