use nalgebra::{DVector, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::model::RobotModel;

/// Generalized position `[p (3), quat w,x,y,z (4), joint angles (n)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration(DVector<f64>);

/// Generalized velocity `[v_world (3), omega_body (3), joint rates (n)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity(DVector<f64>);

impl Configuration {
    /// Wraps `values`, normalizing the base quaternion.
    pub fn new(model: &RobotModel, values: Vec<f64>) -> Result<Self> {
        if values.len() != model.nq() {
            return Err(Error::dim("configuration", model.nq(), values.len()));
        }
        let mut q = DVector::from_vec(values);
        let norm = q.rows(3, 4).norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "base quaternion has norm {norm}"
            )));
        }
        q.rows_mut(3, 4).unscale_mut(norm);
        Ok(Configuration(q))
    }

    /// Base at the origin, identity orientation, all joints at zero.
    pub fn neutral(model: &RobotModel) -> Self {
        let mut q = DVector::zeros(model.nq());
        q[3] = 1.0;
        Configuration(q)
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn base_position(&self) -> Vector3<f64> {
        base_position(self.as_slice())
    }

    pub fn base_rotation(&self) -> UnitQuaternion<f64> {
        base_rotation(self.as_slice())
    }
}

impl Velocity {
    pub fn new(model: &RobotModel, values: Vec<f64>) -> Result<Self> {
        if values.len() != model.nv() {
            return Err(Error::dim("velocity", model.nv(), values.len()));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("velocity".into()));
        }
        Ok(Velocity(DVector::from_vec(values)))
    }

    pub fn zeros(model: &RobotModel) -> Self {
        Velocity(DVector::zeros(model.nv()))
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

pub(crate) fn base_position(q: &[f64]) -> Vector3<f64> {
    Vector3::new(q[0], q[1], q[2])
}

/// Base orientation; tolerates a non-normalized quaternion block.
pub(crate) fn base_rotation(q: &[f64]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(q[3], q[4], q[5], q[6]))
}

pub(crate) fn write_rotation(q: &mut [f64], r: &UnitQuaternion<f64>) {
    q[3] = r.w;
    q[4] = r.i;
    q[5] = r.j;
    q[6] = r.k;
}

/// `q ⊕ v·dt`: base position moves by the world linear velocity, the base
/// orientation by the exponential map of the body angular velocity, joint
/// angles additively.
pub fn integrate_configuration(q: &[f64], v: &[f64], dt: f64) -> DVector<f64> {
    let mut out = DVector::from_column_slice(q);
    for i in 0..3 {
        out[i] += v[i] * dt;
    }
    let omega = Vector3::new(v[3], v[4], v[5]) * dt;
    let mut rot = base_rotation(q) * UnitQuaternion::from_scaled_axis(omega);
    rot.renormalize();
    write_rotation(out.as_mut_slice(), &rot);
    for i in 7..q.len() {
        out[i] += v[i - 1] * dt;
    }
    out
}

/// Rotation vector of `q`, precise at small angles (atan2 rather than acos).
pub(crate) fn quaternion_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
    let s = q.imag().norm();
    if s < 1e-300 {
        return q.imag() * 2.0;
    }
    q.imag() * (2.0 * s.atan2(q.w) / s)
}

/// Tangent-space difference `q1 ⊖ q0` (so that `q0 ⊕ (q1 ⊖ q0) = q1`).
/// The rotation block is the logarithm of `R0^T R1` in the body frame.
pub fn configuration_difference(q0: &[f64], q1: &[f64]) -> DVector<f64> {
    let nv = q0.len() - 1;
    let mut out = DVector::zeros(nv);
    for i in 0..3 {
        out[i] = q1[i] - q0[i];
    }
    let rel = base_rotation(q0).inverse() * base_rotation(q1);
    let log = quaternion_log(&rel);
    out[3] = log.x;
    out[4] = log.y;
    out[5] = log.z;
    for i in 7..q0.len() {
        out[i - 1] = q1[i] - q0[i];
    }
    out
}
