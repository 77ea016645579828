//! Cost terms and constraint residuals, one function per term family.
//! The problem assembly in `problem.rs` calls these per knot.

use nalgebra::{DVector, Vector2, Vector3};

use super::{Diagonal3, GroundMap, KinodynamicTrajectory, Knot, Weights};
use crate::error::{Error, Result};
use crate::kinodyn::{
    capsule_distance, configuration_difference, forward_kinematics, integrate_configuration,
    Kinematics, WorldCapsule, GRAVITY,
};
use crate::mocap::ContactSchedule;
use crate::model::RobotModel;

/// Residual values with elementwise bounds `lower <= values <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounded {
    pub values: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl Bounded {
    pub fn empty() -> Self {
        Bounded {
            values: DVector::zeros(0),
            lower: DVector::zeros(0),
            upper: DVector::zeros(0),
        }
    }

    fn push(&mut self, value: f64, lower: f64, upper: f64) {
        let n = self.values.len();
        self.values = self.values.clone().insert_row(n, value);
        self.lower = self.lower.clone().insert_row(n, lower);
        self.upper = self.upper.clone().insert_row(n, upper);
    }

    fn from_rows(rows: Vec<(f64, f64, f64)>) -> Self {
        Bounded {
            values: DVector::from_iterator(rows.len(), rows.iter().map(|r| r.0)),
            lower: DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1)),
            upper: DVector::from_iterator(rows.len(), rows.iter().map(|r| r.2)),
        }
    }

    /// Distance of each row outside its bounds (0 when satisfied).
    pub fn violation(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.values.len(),
            (0..self.values.len()).map(|i| {
                (self.lower[i] - self.values[i]).max(self.values[i] - self.upper[i]).max(0.0)
            }),
        )
    }

    pub fn max_violation(&self) -> f64 {
        self.violation().iter().fold(0.0, |a, b| a.max(*b))
    }
}

/// `‖φ_FK(q) − p‖²` over the keypoints, times `q_m`.
pub fn cost_reference(model: &RobotModel, q: &[f64], keypoints: &[usize], targets: &[Vector3<f64>], q_m: f64) -> f64 {
    let kin = forward_kinematics(model, q);
    keypoints
        .iter()
        .zip(targets)
        .map(|(&kp, p)| q_m * (kin.keypoint(model, kp) - p).norm_squared())
        .sum()
}

/// World velocity of the CoM of `foot_link`.
pub fn foot_velocity(model: &RobotModel, q: &[f64], v: &[f64], foot_link: usize) -> Vector3<f64> {
    let kin = forward_kinematics(model, q);
    kin.point_jacobian(model, foot_link, &model.links[foot_link].com_offset) * DVector::from_column_slice(v)
}

/// `−ζ_k q_i ‖J_foot v‖²`, with `ζ_k = 1` inside `[T_swing, T_impact]`.
pub fn cost_impact(
    model: &RobotModel,
    q: &[f64],
    v: &[f64],
    k: usize,
    schedule: &ContactSchedule,
    foot_link: usize,
    q_i: &Diagonal3,
) -> f64 {
    if !schedule.in_swing(k) {
        return 0.0;
    }
    let vel = foot_velocity(model, q, v, foot_link);
    -(0..3).map(|a| q_i.0[a] * vel[a] * vel[a]).sum::<f64>()
}

/// `(1 − ζ) q_v ‖v‖² + q_h ‖h‖² + q_f Σ‖f_i‖²`.
pub fn cost_regularization(v: &[f64], h: &Vector3<f64>, f: &[Vector3<f64>], in_swing: bool, w: &Weights) -> f64 {
    let gate = if in_swing { 0.0 } else { 1.0 };
    gate * w.q_v * v.iter().map(|x| x * x).sum::<f64>()
        + w.q_h * h.norm_squared()
        + w.q_f * f.iter().map(|x| x.norm_squared()).sum::<f64>()
}

/// Momentum rate residual at one knot: `m r'' − Σf − m g` and
/// `h' − Σ(c_i − r) × f_i`.
pub fn centroidal_dynamics(knot: &Knot, mass: f64) -> DVector<f64> {
    let force: Vector3<f64> = knot.f.iter().sum();
    let torque: Vector3<f64> = knot.c.iter().zip(&knot.f).map(|(c, f)| (c - knot.r).cross(f)).sum();
    let lin = knot.rdd * mass - force - GRAVITY * mass;
    let ang = knot.hd - torque;
    DVector::from_iterator(6, lin.iter().chain(ang.iter()).copied())
}

/// Explicit Euler integration of `r`, `r'` and `h` between two knots.
pub fn centroidal_integration(knot: &Knot, next: &Knot, dt: f64) -> DVector<f64> {
    let a = next.r - knot.r - knot.rd * dt;
    let b = next.rd - knot.rd - knot.rdd * dt;
    let c = next.h - knot.h - knot.hd * dt;
    DVector::from_iterator(9, a.iter().chain(b.iter()).chain(c.iter()).copied())
}

/// Dynamics rows of knot `k` followed by the integration rows to `k + 1`.
pub fn residual_centroidal(knot: &Knot, next: &Knot, model: &RobotModel, dt: f64) -> DVector<f64> {
    let d = centroidal_dynamics(knot, model.total_mass);
    let i = centroidal_integration(knot, next, dt);
    DVector::from_iterator(15, d.iter().chain(i.iter()).copied())
}

/// `h − A_CAM(q) v`, `r − φ_CoM(q)`, then `c_i − φ_{c_i}(q)`.
pub fn residual_consistency(model: &RobotModel, knot: &Knot) -> DVector<f64> {
    let kin = forward_kinematics(model, knot.q.as_slice());
    consistency_with(model, &kin, knot)
}

pub(crate) fn consistency_with(model: &RobotModel, kin: &Kinematics, knot: &Knot) -> DVector<f64> {
    let h = knot.h - kin.centroidal_momentum(model, knot.v.as_slice()).0;
    let r = knot.r - kin.center_of_mass(model);
    let mut out = Vec::with_capacity(6 + 3 * knot.c.len());
    out.extend(h.iter());
    out.extend(r.iter());
    for (i, c) in knot.c.iter().enumerate() {
        out.extend((c - kin.contact_point(model, i)).iter());
    }
    DVector::from_vec(out)
}

/// The five facets of the friction pyramid, each `<= 0` when satisfied:
/// `±f_x − μ f_z`, `±f_y − μ f_z`, `−f_z`.
pub fn friction_pyramid(f: &Vector3<f64>, mu: f64) -> [f64; 5] {
    [
        f.x - mu * f.z,
        -f.x - mu * f.z,
        f.y - mu * f.z,
        -f.y - mu * f.z,
        -f.z,
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactResidual {
    /// Ground height of active points, zero force of inactive points, then
    /// no-slip rows for points active at both knots.
    pub equality: DVector<f64>,
    /// Friction pyramid of active points, clearance of inactive ones.
    pub inequality: Bounded,
}

/// Contact constraints at one knot. `previous` is the preceding knot and its
/// activity, absent at the first knot.
pub fn residual_contact(
    knot: &Knot,
    active: &[bool],
    previous: Option<(&Knot, &[bool])>,
    mu: f64,
    ground: &dyn GroundMap,
) -> ContactResidual {
    let mut eq = Vec::new();
    let mut ineq = Vec::new();
    for (&on, (c, f)) in active.iter().zip(knot.c.iter().zip(&knot.f)) {
        let gap = c.z - ground.height(c.x, c.y);
        if on {
            eq.push(gap);
            ineq.extend(friction_pyramid(f, mu).map(|v| (v, f64::NEG_INFINITY, 0.0)));
        } else {
            eq.extend(f.iter());
            ineq.push((gap, 0.0, f64::INFINITY));
        }
    }
    if let Some((prev, prev_active)) = previous {
        for i in 0..active.len() {
            if active[i] && prev_active[i] {
                eq.extend((knot.c[i] - prev.c[i]).iter());
            }
        }
    }
    ContactResidual {
        equality: DVector::from_vec(eq),
        inequality: Bounded::from_rows(ineq),
    }
}

/// Angle between `ball − body` and the world x axis, radians.
pub fn approach_angle(body_xy: &Vector2<f64>, ball_xy: &Vector2<f64>) -> Result<f64> {
    let d = ball_xy - body_xy;
    let n = d.norm();
    if n < 1e-9 {
        return Err(Error::InvalidArgument("ball position coincides with the body".into()));
    }
    Ok((d.x / n).clamp(-1.0, 1.0).acos())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiomechanicsResidual {
    /// Ankle joint rates stacked over the lock-window knots.
    pub ankle_rates: DVector<f64>,
    /// Approach angle at the first knot with its bounds.
    pub approach: Bounded,
}

pub fn residual_biomechanics(
    traj: &KinodynamicTrajectory,
    schedule: &ContactSchedule,
    ankle_joints: &[usize],
    theta: (f64, f64),
    ball_xy: &Vector2<f64>,
) -> Result<BiomechanicsResidual> {
    let mut rates = Vec::new();
    for (k, knot) in traj.knots.iter().enumerate() {
        if schedule.in_lock(k) {
            rates.extend(ankle_joints.iter().map(|&j| knot.v[RobotModel::v_index(j)]));
        }
    }
    let q0 = &traj.knots[0].q;
    let angle = approach_angle(&Vector2::new(q0[0], q0[1]), ball_xy)?;
    let mut approach = Bounded::empty();
    approach.push(angle, theta.0, theta.1);
    Ok(BiomechanicsResidual {
        ankle_rates: DVector::from_vec(rates),
        approach,
    })
}

/// `τ = −S^T Σ J_i^T f_i`, one entry per actuated joint.
pub fn torque_proxy(model: &RobotModel, kin: &Kinematics, forces: &[Vector3<f64>]) -> DVector<f64> {
    let mut gen = DVector::zeros(model.nv());
    for (i, f) in forces.iter().enumerate() {
        if f.iter().all(|x| *x == 0.0) {
            continue;
        }
        let cp = &model.contact_points[i];
        gen += kin.point_jacobian(model, cp.link, &cp.offset).transpose() * f;
    }
    -gen.rows(6, model.n_joints()).into_owned()
}

/// `C_ij(q) − (r_i + r_j)` for every collision pair (negative means overlap).
pub fn collision_margins(model: &RobotModel, kin: &Kinematics) -> Vec<f64> {
    model
        .collision_pairs
        .iter()
        .map(|&(i, j)| {
            let a = WorldCapsule::of_link(model, kin, i).expect("validated pair");
            let b = WorldCapsule::of_link(model, kin, j).expect("validated pair");
            capsule_distance(&a, &b) - (a.radius + b.radius)
        })
        .collect()
}

/// Joint position box, joint rate box, torque proxy against
/// `torque_bounds`, then collision margins (lower bound 0).
pub fn residual_limits_and_collision(
    model: &RobotModel,
    knot: &Knot,
    torque_bounds: &[(f64, f64)],
) -> Bounded {
    let kin = forward_kinematics(model, knot.q.as_slice());
    let mut rows = Vec::new();
    for (j, joint) in model.joints.iter().enumerate().skip(1) {
        rows.push((knot.q[RobotModel::q_index(j)], joint.q_min, joint.q_max));
    }
    for (j, joint) in model.joints.iter().enumerate().skip(1) {
        rows.push((knot.v[RobotModel::v_index(j)], joint.v_min, joint.v_max));
    }
    let tau = torque_proxy(model, &kin, &knot.f);
    for (t, &(lo, hi)) in tau.iter().zip(torque_bounds) {
        rows.push((*t, lo, hi));
    }
    for m in collision_margins(model, &kin) {
        rows.push((m, 0.0, f64::INFINITY));
    }
    Bounded::from_rows(rows)
}

/// `q_{k+1} ⊖ (q_k ⊕ v_k dt)`.
pub fn residual_pose_integration(q: &[f64], v: &[f64], q_next: &[f64], dt: f64) -> DVector<f64> {
    let predicted = integrate_configuration(q, v, dt);
    configuration_difference(predicted.as_slice(), q_next)
}
