#![allow(dead_code)]

use std::path::PathBuf;

use kickopt_core::kinodyn::forward_kinematics;
use kickopt_core::mocap::synth::{robot_motion, Motion};
use kickopt_core::mocap::KeypointReference;
use kickopt_core::model::{load_model, RobotModel};
use kickopt_core::transcription::{Knot, KinodynamicTrajectory};
use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

pub fn load_data_model(name: &str) -> RobotModel {
    let text = std::fs::read_to_string(data_path(name)).expect("shipped model");
    load_model(&text).expect("valid shipped model")
}

/// Serial chain hanging off a base link. Each entry is
/// `(axis, origin in parent frame, mass, com offset)`.
pub fn chain_model(links: &[([f64; 3], [f64; 3], f64, [f64; 3])], base_mass: f64) -> RobotModel {
    let mut link_docs = vec![format!(
        r#"{{"name":"base","mass":{base_mass},"inertia":[0.02,0.001,0,0.03,0.002,0.04]}}"#
    )];
    let mut joint_docs = vec![r#"{"name":"root","kind":"floating-base"}"#.to_string()];
    for (i, (axis, origin, mass, com)) in links.iter().enumerate() {
        link_docs.push(format!(
            r#"{{"name":"l{}","mass":{},"com":{:?},"inertia":[0.011,0.001,-0.002,0.013,0.0015,0.007]}}"#,
            i + 1,
            mass,
            com
        ));
        joint_docs.push(format!(
            r#"{{"name":"j{}","kind":"revolute","parent":{},"origin":{:?},"axis":{:?},
                "q_min":-3,"q_max":3,"v_min":-20,"v_max":20,"tau_min":-50,"tau_max":50}}"#,
            i + 1,
            i,
            origin,
            axis
        ));
    }
    let doc = format!(
        r#"{{"links":[{}],"joints":[{}]}}"#,
        link_docs.join(","),
        joint_docs.join(",")
    );
    load_model(&doc).expect("valid chain model")
}

pub fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Three links with skewed axes, used by the dynamics oracles.
pub fn three_link_chain() -> RobotModel {
    chain_model(
        &[
            (unit([0.0, 1.0, 0.0]), [0.0, 0.05, -0.1], 1.3, [0.02, 0.0, -0.15]),
            (unit([1.0, 0.0, 0.0]), [0.0, 0.0, -0.3], 0.9, [0.0, 0.01, -0.12]),
            (unit([0.0, 0.6, 0.8]), [0.03, 0.0, -0.28], 0.5, [0.05, 0.0, -0.05]),
        ],
        2.0,
    )
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random configuration with a random base pose and joints within limits.
pub fn random_q(model: &RobotModel, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let mut q = DVector::zeros(model.nq());
    for i in 0..3 {
        q[i] = rng.random_range(-1.0..1.0);
    }
    let rot = UnitQuaternion::from_euler_angles(
        rng.random_range(-3.0..3.0),
        rng.random_range(-1.5..1.5),
        rng.random_range(-3.0..3.0),
    );
    q[3] = rot.w;
    q[4] = rot.i;
    q[5] = rot.j;
    q[6] = rot.k;
    for (j, joint) in model.joints.iter().enumerate().skip(1) {
        let lo = joint.q_min.max(-2.0);
        let hi = joint.q_max.min(2.0);
        q[6 + j] = rng.random_range(lo..=hi);
    }
    q
}

pub fn random_v(model: &RobotModel, rng: &mut ChaCha8Rng, scale: f64) -> DVector<f64> {
    DVector::from_fn(model.nv(), |_, _| rng.random_range(-scale..scale))
}

/// Base with two single-joint legs: capsules of radius 0.06 whose
/// centerlines are 0.10 apart at `q = 0`, two contacts per leg.
pub fn two_leg_model() -> RobotModel {
    let leg = |name: &str| {
        format!(
            r#"{{"name":"{name}","mass":2.5,"com":[0,0,-0.2],"inertia":[0.03,0,0,0.03,0,0.004],
                "capsule":{{"a":[0,0,0],"b":[0,0,-0.4],"radius":0.06}}}}"#
        )
    };
    let joint = |name: &str, y: f64, axis: &str| {
        format!(
            r#"{{"name":"{name}","kind":"revolute","parent":0,"origin":[0,{y},0],"axis":{axis},
                "q_min":-2,"q_max":2,"v_min":-15,"v_max":15,"tau_min":-40,"tau_max":40}}"#
        )
    };
    let contact = |name: &str, link: usize, x: f64, foot: &str| {
        format!(r#"{{"name":"{name}","link":{link},"offset":[{x},0,-0.45],"foot":"{foot}"}}"#)
    };
    let doc = format!(
        r#"{{"name":"two_leg",
            "links":[{{"name":"base","mass":6,"inertia":[0.1,0,0,0.08,0,0.06]}},{},{}],
            "joints":[{{"name":"root","kind":"floating-base"}},{},{}],
            "contact_points":[{},{},{},{}],
            "keypoints":[{{"name":"pelvis","link":0,"offset":[0,0,0]}},
                         {{"name":"r_foot","link":1,"offset":[0,0,-0.45]}},
                         {{"name":"l_foot","link":2,"offset":[0,0,-0.45]}}],
            "collision_pairs":[[1,2]]}}"#,
        leg("r_leg"),
        leg("l_leg"),
        joint("r_hip", -0.05, "[0,1,0]"),
        joint("l_hip", 0.05, "[0.6,0.8,0]"),
        contact("r_heel", 1, -0.05, "right"),
        contact("r_toe", 1, 0.05, "right"),
        contact("l_heel", 2, -0.05, "left"),
        contact("l_toe", 2, 0.05, "left"),
    );
    load_model(&doc).expect("valid two-leg model")
}

pub fn standing_q(model: &RobotModel) -> DVector<f64> {
    robot_motion(model, Motion::Standing, 30.0, 1).unwrap().remove(0)
}

pub fn reference_at(model: &RobotModel, qs: &[DVector<f64>]) -> KeypointReference {
    KeypointReference {
        keypoints: (0..model.keypoints.len()).collect(),
        frames: qs
            .iter()
            .map(|q| {
                let kin = forward_kinematics(model, q.as_slice());
                (0..model.keypoints.len()).map(|k| kin.keypoint(model, k)).collect()
            })
            .collect(),
    }
}

/// Knot whose centroidal variables come straight from the kernels.
pub fn consistent_knot(model: &RobotModel, q: DVector<f64>, v: DVector<f64>) -> Knot {
    let kin = forward_kinematics(model, q.as_slice());
    let mut k = Knot::zeros(model);
    let cmm = kin.centroidal_momentum_matrix(model);
    k.h = cmm.fixed_rows::<3>(0) * &v;
    k.r = kin.center_of_mass(model);
    k.c = (0..model.n_contacts()).map(|i| kin.contact_point(model, i)).collect();
    k.q = q;
    k.v = v;
    k
}

/// Standing trajectory with vertical contact forces that balance gravity
/// and put the centre of pressure under the CoM.
pub fn static_standing(model: &RobotModel, n: usize, dt: f64) -> KinodynamicTrajectory {
    let q = standing_q(model);
    let mut k = consistent_knot(model, q, DVector::zeros(model.nv()));
    let nc = model.n_contacts();
    // Least-norm split over a shrinking active set until no contact pulls.
    let mut set: Vec<usize> = (0..nc).collect();
    let fz = loop {
        let a = DMatrix::from_fn(3, set.len(), |row, j| match row {
            0 => 1.0,
            1 => k.c[set[j]].x - k.r.x,
            _ => k.c[set[j]].y - k.r.y,
        });
        let b = DVector::from_vec(vec![model.total_mass * 9.81, 0.0, 0.0]);
        let part = a.transpose() * (&a * a.transpose()).try_inverse().unwrap() * b;
        if part.iter().all(|f| *f >= 0.0) {
            let mut fz = DVector::zeros(nc);
            for (j, &i) in set.iter().enumerate() {
                fz[i] = part[j];
            }
            break fz;
        }
        set = set.iter().zip(part.iter()).filter(|(_, f)| **f > 0.0).map(|(i, _)| *i).collect();
        assert!(set.len() >= 3, "CoM outside the support polygon");
    };
    k.f = fz.iter().map(|f| Vector3::new(0.0, 0.0, *f)).collect();
    KinodynamicTrajectory {
        dt,
        knots: vec![k; n],
    }
}

/// World angular velocity from two rotation samples: vee(log(R+ R-^T)) / 2h.
pub fn fd_angular(r_minus: &Matrix3<f64>, r_plus: &Matrix3<f64>, h: f64) -> Vector3<f64> {
    // Quaternion log: the matrix route goes through acos and loses precision
    // at the tiny angles a finite difference produces.
    let rel = nalgebra::UnitQuaternion::from_matrix(&(r_plus * r_minus.transpose()));
    rel.scaled_axis() / (2.0 * h)
}

/// tau = d/dt(dL/dqd) - dL/dq on a fixed-base chain, by finite differences
/// of kinetic and potential energy.
pub fn lagrangian_torques(model: &RobotModel, theta: &[f64], thetad: &[f64], thetadd: &[f64]) -> Vec<f64> {
    let n = theta.len();
    let g = 9.81;
    let full_q = |th: &[f64]| {
        let mut q = vec![0.0; 7 + n];
        q[3] = 1.0;
        q[7..].copy_from_slice(th);
        q
    };
    let kinetic = |th: &[f64], thd: &[f64]| {
        let q = full_q(th);
        let kin = forward_kinematics(model, &q);
        let mut v = DVector::zeros(6 + n);
        v.rows_mut(6, n).copy_from_slice(thd);
        let mut t = 0.0;
        for (i, link) in model.links.iter().enumerate() {
            let cdot = kin.point_jacobian(model, i, &link.com_offset) * &v;
            let w = kin.angular_jacobian(model, i) * &v;
            let iw = kin.rotations[i] * link.inertia * kin.rotations[i].transpose();
            t += 0.5 * link.mass * cdot.norm_squared() + 0.5 * w.dot(&(iw * w));
        }
        t
    };
    let potential = |th: &[f64]| {
        let q = full_q(th);
        let kin = forward_kinematics(model, &q);
        model
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| l.mass * g * kin.link_com(model, i).z)
            .sum::<f64>()
    };
    let lagrangian = |th: &[f64], thd: &[f64]| kinetic(th, thd) - potential(th);
    let dl_dthd = |th: &[f64], thd: &[f64]| -> Vec<f64> {
        let h = 1e-3;
        (0..n)
            .map(|i| {
                let mut p = thd.to_vec();
                let mut m = thd.to_vec();
                p[i] += h;
                m[i] -= h;
                (lagrangian(th, &p) - lagrangian(th, &m)) / (2.0 * h)
            })
            .collect()
    };
    let ht = 1e-4;
    let at = |t: f64| -> (Vec<f64>, Vec<f64>) {
        let th = (0..n).map(|i| theta[i] + thetad[i] * t + 0.5 * thetadd[i] * t * t).collect();
        let thd = (0..n).map(|i| thetad[i] + thetadd[i] * t).collect();
        (th, thd)
    };
    let (thp, thdp) = at(ht);
    let (thm, thdm) = at(-ht);
    let pp = dl_dthd(&thp, &thdp);
    let pm = dl_dthd(&thm, &thdm);
    let hq = 1e-5;
    (0..n)
        .map(|i| {
            let mut p = theta.to_vec();
            let mut m = theta.to_vec();
            p[i] += hq;
            m[i] -= hq;
            let dl_dq = (lagrangian(&p, thetad) - lagrangian(&m, thetad)) / (2.0 * hq);
            (pp[i] - pm[i]) / (2.0 * ht) - dl_dq
        })
        .collect()
}
