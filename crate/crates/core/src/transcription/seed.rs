//! Initial guesses: a per-frame keypoint fit for the kinematic stage and
//! kernel-consistent centroidal variables for the full stage.

use nalgebra::{DMatrix, DVector, Vector3};

use super::{KinodynamicTrajectory, Knot, ProblemSpec};
use crate::error::{Error, Result};
use crate::kinodyn::{configuration_difference, forward_kinematics, integrate_configuration, Configuration, GRAVITY};
use crate::model::RobotModel;

fn clamp_joints(model: &RobotModel, q: &mut DVector<f64>) {
    for (j, joint) in model.joints.iter().enumerate().skip(1) {
        let i = RobotModel::q_index(j);
        q[i] = q[i].clamp(joint.q_min, joint.q_max);
    }
}

fn fit_error(model: &RobotModel, q: &DVector<f64>, keypoints: &[usize], targets: &[Vector3<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let kin = forward_kinematics(model, q.as_slice());
    let mut r = DVector::zeros(3 * keypoints.len());
    let mut jac = DMatrix::zeros(3 * keypoints.len(), model.nv());
    for (i, &kp) in keypoints.iter().enumerate() {
        let k = &model.keypoints[kp];
        r.rows_mut(3 * i, 3).copy_from(&(kin.keypoint(model, kp) - targets[i]));
        jac.rows_mut(3 * i, 3).copy_from(&kin.point_jacobian(model, k.link, &k.offset));
    }
    (r, jac)
}

/// Least-squares fit of `q` to keypoint targets, joints kept within limits.
pub fn fit_configuration(
    model: &RobotModel,
    start: &DVector<f64>,
    keypoints: &[usize],
    targets: &[Vector3<f64>],
) -> DVector<f64> {
    let mut q = start.clone();
    clamp_joints(model, &mut q);
    let (mut r, mut jac) = fit_error(model, &q, keypoints, targets);
    let mut err = r.norm_squared();
    let mut damping = 1e-3;
    for _ in 0..200 {
        let jt = jac.transpose();
        let mut h = &jt * &jac;
        for i in 0..h.nrows() {
            h[(i, i)] += damping * (1.0 + h[(i, i)]);
        }
        let Some(step) = h.cholesky().map(|c| c.solve(&(-(&jt * &r)))) else {
            damping *= 10.0;
            continue;
        };
        let mut trial = integrate_configuration(q.as_slice(), step.as_slice(), 1.0);
        clamp_joints(model, &mut trial);
        let (tr, tj) = fit_error(model, &trial, keypoints, targets);
        let terr = tr.norm_squared();
        if terr < err {
            let gain = err - terr;
            q = trial;
            r = tr;
            jac = tj;
            err = terr;
            damping = (damping / 3.0).max(1e-12);
            if gain < 1e-16 * (1.0 + err) || step.amax() < 1e-12 {
                break;
            }
        } else {
            damping *= 4.0;
            if damping > 1e8 {
                break;
            }
        }
    }
    q
}

/// Kinematic-stage seed: per-knot fit, warm-started from the previous knot,
/// and velocities from forward differences (zero at the last knot, clamped
/// to the rate limits). Centroidal fields are left at zero.
pub fn seed_from_reference(spec: &ProblemSpec) -> Result<KinodynamicTrajectory> {
    let model = &spec.model;
    let dt = spec.dt();
    let kps = &spec.reference.keypoints;
    let mut q = Configuration::neutral(model).into_inner();
    // Start the base under the first frame's keypoint centroid.
    let first = &spec.reference.frames[0];
    let kin = forward_kinematics(model, q.as_slice());
    let shift: Vector3<f64> = kps
        .iter()
        .zip(first)
        .map(|(&kp, p)| p - kin.keypoint(model, kp))
        .sum::<Vector3<f64>>()
        / kps.len() as f64;
    for i in 0..3 {
        q[i] += shift[i];
    }

    let mut qs = Vec::with_capacity(spec.n_knots());
    for targets in &spec.reference.frames {
        q = fit_configuration(model, &q, kps, targets);
        if q.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("keypoint fit".into()));
        }
        qs.push(q.clone());
    }
    let knots = (0..qs.len())
        .map(|k| {
            let mut knot = Knot::zeros(model);
            knot.q = qs[k].clone();
            if k + 1 < qs.len() {
                knot.v = configuration_difference(qs[k].as_slice(), qs[k + 1].as_slice()) / dt;
                for (j, joint) in model.joints.iter().enumerate().skip(1) {
                    let i = RobotModel::v_index(j);
                    knot.v[i] = knot.v[i].clamp(joint.v_min, joint.v_max);
                }
            }
            knot
        })
        .collect();
    Ok(KinodynamicTrajectory { dt, knots })
}

/// Fill `r, r', r'', h, h', c, f` from `(q, v)`: CoM and momentum from the
/// kernels, rates by forward differences, contact points by forward
/// kinematics and the weight shared equally over the active contacts.
pub fn centroidal_seed(spec: &ProblemSpec, traj: &KinodynamicTrajectory) -> KinodynamicTrajectory {
    let model = &spec.model;
    let mut out = traj.clone();
    let weight = -GRAVITY * model.total_mass;
    for (k, knot) in out.knots.iter_mut().enumerate() {
        let kin = forward_kinematics(model, knot.q.as_slice());
        knot.r = kin.center_of_mass(model);
        knot.rd = kin.com_jacobian(model) * &knot.v;
        let cmm = kin.centroidal_momentum_matrix(model);
        knot.h = cmm.fixed_rows::<3>(0) * &knot.v;
        let active = &spec.schedule.active[k];
        let n_active = active.iter().filter(|a| **a).count();
        for i in 0..model.n_contacts() {
            knot.c[i] = kin.contact_point(model, i);
            knot.f[i] = if active[i] { weight / n_active as f64 } else { Vector3::zeros() };
        }
    }
    let dt = out.dt;
    for k in 0..out.knots.len() {
        let (rdd, hd) = match out.knots.get(k + 1) {
            Some(next) => ((next.rd - out.knots[k].rd) / dt, (next.h - out.knots[k].h) / dt),
            None => (Vector3::zeros(), Vector3::zeros()),
        };
        out.knots[k].rdd = rdd;
        out.knots[k].hd = hd;
    }
    out
}
