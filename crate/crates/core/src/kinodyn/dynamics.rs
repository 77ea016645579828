use nalgebra::{DVector, Vector3, Vector6};

use super::kinematics::forward_kinematics;
use crate::model::RobotModel;

pub const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

#[derive(Debug, Clone, PartialEq)]
pub struct InverseDynamics {
    /// Generalized force on the base: world force (0..3) and the moment
    /// about the base origin projected on the body axes (3..6). Zero when
    /// the motion is consistent with the applied contact forces.
    pub base_wrench: Vector6<f64>,
    /// Actuated joint torques, length `n`.
    pub torques: DVector<f64>,
}

/// Recursive Newton-Euler in world coordinates.
///
/// `a` is the time derivative of `v` (world linear base acceleration, body
/// angular acceleration, joint accelerations). `contact_forces[i]` is the
/// world force applied by the environment at contact point `i`.
pub fn inverse_dynamics(
    model: &RobotModel,
    q: &[f64],
    v: &[f64],
    a: &[f64],
    contact_forces: &[Vector3<f64>],
    gravity: &Vector3<f64>,
) -> InverseDynamics {
    let kin = forward_kinematics(model, q);
    let n_links = model.n_links();
    let r0 = kin.rotations[0];

    let mut omega = vec![Vector3::zeros(); n_links];
    let mut alpha = vec![Vector3::zeros(); n_links];
    let mut acc = vec![Vector3::zeros(); n_links];
    omega[0] = r0 * Vector3::new(v[3], v[4], v[5]);
    alpha[0] = r0 * Vector3::new(a[3], a[4], a[5]);
    acc[0] = Vector3::new(a[0], a[1], a[2]);

    for (i, joint) in model.joints.iter().enumerate().skip(1) {
        let p = joint.parent.expect("validated tree");
        let axis = kin.joint_axis(model, i);
        let qd = v[RobotModel::v_index(i)];
        let qdd = a[RobotModel::v_index(i)];
        let d = kin.positions[i] - kin.positions[p];
        omega[i] = omega[p] + axis * qd;
        alpha[i] = alpha[p] + axis * qdd + omega[p].cross(&(axis * qd));
        acc[i] = acc[p] + alpha[p].cross(&d) + omega[p].cross(&omega[p].cross(&d));
    }

    // Net force / moment (about the link origin) each link needs.
    let mut force = vec![Vector3::zeros(); n_links];
    let mut moment = vec![Vector3::zeros(); n_links];
    for (i, link) in model.links.iter().enumerate() {
        let e = kin.rotations[i] * link.com_offset;
        let acc_com = acc[i] + alpha[i].cross(&e) + omega[i].cross(&omega[i].cross(&e));
        let f = (acc_com - gravity) * link.mass;
        let iw = kin.world_inertia(model, i);
        let n = iw * alpha[i] + omega[i].cross(&(iw * omega[i]));
        force[i] = f;
        moment[i] = n + e.cross(&f);
    }
    for (c, cp) in model.contact_points.iter().enumerate() {
        let f = contact_forces[c];
        let x = kin.point(cp.link, &cp.offset);
        force[cp.link] -= f;
        moment[cp.link] -= (x - kin.positions[cp.link]).cross(&f);
    }

    let mut torques = DVector::zeros(model.n_joints());
    for i in (1..n_links).rev() {
        let p = model.joints[i].parent.expect("validated tree");
        torques[i - 1] = kin.joint_axis(model, i).dot(&moment[i]);
        let d = kin.positions[i] - kin.positions[p];
        let (fi, ni) = (force[i], moment[i]);
        force[p] += fi;
        moment[p] += ni + d.cross(&fi);
    }

    let body_moment = r0.transpose() * moment[0];
    InverseDynamics {
        base_wrench: Vector6::new(
            force[0].x,
            force[0].y,
            force[0].z,
            body_moment.x,
            body_moment.y,
            body_moment.z,
        ),
        torques,
    }
}
