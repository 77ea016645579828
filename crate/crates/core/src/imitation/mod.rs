//! Imitation-learning kernels: tracking rewards, the ball reward, the PD
//! law, policy observations and reference-guided early termination.
//!
//! Everything here is a pure function of its arguments so rollout workers
//! can call it concurrently.

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinodyn::forward_kinematics;
use crate::model::RobotModel;
use crate::transcription::KinodynamicTrajectory;

/// Weights and (negative) exponent scales of the tracking rewards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub w_k: f64,
    pub w_q: f64,
    pub w_v: f64,
    pub w_c: f64,
    pub w_ball: f64,
    pub k_k: f64,
    pub k_q: f64,
    pub k_v: f64,
    pub k_c: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w_k: 0.25,
            w_q: 0.25,
            w_v: 0.1,
            w_c: 0.25,
            w_ball: 1.0,
            k_k: -2.0,
            k_q: -2.0,
            k_v: -2.0,
            k_c: -2.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_k, self.w_q, self.w_v, self.w_c, self.w_ball];
        if w.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(Error::validation("reward weights", "weights must be non-negative"));
        }
        let k = [self.k_k, self.k_q, self.k_v, self.k_c];
        if k.iter().any(|x| !(*x < 0.0 && x.is_finite())) {
            return Err(Error::validation("reward scales", "exponent scales must be negative"));
        }
        Ok(())
    }
}

/// Whole-body state `(q, v)` in the model's layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
}

impl State {
    pub fn new(q: DVector<f64>, v: DVector<f64>) -> Self {
        State { q, v }
    }

    fn check(&self, model: &RobotModel, what: &str) -> Result<()> {
        if self.q.len() != model.nq() {
            return Err(Error::dim(format!("{what} q"), model.nq(), self.q.len()));
        }
        if self.v.len() != model.nv() {
            return Err(Error::dim(format!("{what} v"), model.nv(), self.v.len()));
        }
        Ok(())
    }

    /// Length of one state in an observation.
    pub fn dim(model: &RobotModel) -> usize {
        model.nq() + model.nv()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardComponents {
    pub keypoint: f64,
    pub joint: f64,
    pub com: f64,
}

impl RewardComponents {
    pub fn total(&self) -> f64 {
        self.keypoint + self.joint + self.com
    }
}

/// Keypoint, joint and CoM tracking rewards. The joint term compares the
/// actuated joint positions and rates; the floating base is tracked
/// through the keypoint and CoM terms.
pub fn reward_imitation(
    model: &RobotModel,
    state: &State,
    reference: &State,
    weights: &RewardWeights,
) -> Result<RewardComponents> {
    weights.validate()?;
    state.check(model, "state")?;
    reference.check(model, "reference")?;
    let kin = forward_kinematics(model, state.q.as_slice());
    let kin_ref = forward_kinematics(model, reference.q.as_slice());
    let keypoint_err: f64 = (0..model.keypoints.len())
        .map(|m| (kin_ref.keypoint(model, m) - kin.keypoint(model, m)).norm())
        .sum();
    let n = model.n_joints();
    let q_err = (reference.q.rows(7, n) - state.q.rows(7, n)).norm();
    let v_err = (reference.v.rows(6, n) - state.v.rows(6, n)).norm();
    let com_err = (kin_ref.center_of_mass(model) - kin.center_of_mass(model)).norm();
    Ok(RewardComponents {
        keypoint: weights.w_k * (weights.k_k * keypoint_err).exp(),
        joint: weights.w_q * (weights.k_q * q_err).exp() + weights.w_v * (weights.k_v * v_err).exp(),
        com: weights.w_c * (weights.k_c * com_err).exp(),
    })
}

/// `w_ball (exp(max(0, v·n)) − 1)`.
pub fn reward_ball(v_ball: &Vector3<f64>, n_target: &Vector3<f64>, w_ball: f64) -> Result<f64> {
    if (n_target.norm() - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument("target direction must be a unit vector".into()));
    }
    Ok(w_ball * (v_ball.dot(n_target).max(0.0).exp() - 1.0))
}

/// `k_p (q_des − q) − k_d v` per actuated joint, clamped to the model's
/// torque limits. All vectors are joint-space (length `n_joints`).
pub fn pd_torque(
    model: &RobotModel,
    q_des: &[f64],
    q: &[f64],
    v: &[f64],
    k_p: &[f64],
    k_d: &[f64],
) -> Result<DVector<f64>> {
    let n = model.n_joints();
    for (what, len) in [("q_des", q_des.len()), ("q", q.len()), ("v", v.len()), ("k_p", k_p.len()), ("k_d", k_d.len())] {
        if len != n {
            return Err(Error::dim(what, n, len));
        }
    }
    Ok(DVector::from_fn(n, |i, _| {
        let joint = &model.joints[i + 1];
        (k_p[i] * (q_des[i] - q[i]) - k_d[i] * v[i]).clamp(joint.tau_min, joint.tau_max)
    }))
}

/// Reference lookahead offsets of the observation, seconds.
pub const LOOKAHEAD: [f64; 3] = [0.02, 0.68, 1.34];

/// A reference motion sampled at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceMotion {
    pub rate: f64,
    pub frames: Vec<State>,
}

impl ReferenceMotion {
    pub fn from_trajectory(traj: &KinodynamicTrajectory) -> Self {
        ReferenceMotion {
            rate: 1.0 / traj.dt,
            frames: traj.knots.iter().map(|k| State::new(k.q.clone(), k.v.clone())).collect(),
        }
    }

    /// Frame nearest to time `t`, clamped to the clip.
    pub fn frame_index(&self, t: f64) -> usize {
        let i = (t * self.rate).round().max(0.0) as usize;
        i.min(self.frames.len() - 1)
    }
}

/// `[s_ref(t + 0.02), s_ref(t + 0.68), s_ref(t + 1.34), q, v, a_prev]`
/// where each state is `(q, v)`. Length `4 (nq + nv) + n_joints`.
pub fn assemble_observation(
    model: &RobotModel,
    reference: &ReferenceMotion,
    t: f64,
    current: &State,
    previous_action: &[f64],
) -> Result<DVector<f64>> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("observation time must be non-negative, got {t}")));
    }
    if reference.frames.is_empty() || !(reference.rate > 0.0) {
        return Err(Error::InvalidArgument("reference motion is empty".into()));
    }
    current.check(model, "state")?;
    if previous_action.len() != model.n_joints() {
        return Err(Error::dim("previous action", model.n_joints(), previous_action.len()));
    }
    let mut out = Vec::with_capacity(4 * State::dim(model) + model.n_joints());
    for dt in LOOKAHEAD {
        let frame = &reference.frames[reference.frame_index(t + dt)];
        frame.check(model, "reference")?;
        out.extend(frame.q.iter().chain(frame.v.iter()));
    }
    out.extend(current.q.iter().chain(current.v.iter()));
    out.extend_from_slice(previous_action);
    Ok(DVector::from_vec(out))
}

/// Time-varying termination threshold: `n` smoothed stairs from `d_max`
/// down to `d_min` between training steps `t_start` and `t_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetSchedule {
    pub d_max: f64,
    pub d_min: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub n: usize,
    pub gamma: f64,
}

impl RetSchedule {
    /// 30 cm down to 10 cm over a billion steps in four stairs.
    pub fn experiment() -> Self {
        RetSchedule {
            d_max: 0.30,
            d_min: 0.10,
            t_start: 1e8,
            t_end: 1e9,
            n: 4,
            gamma: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_max > self.d_min && self.d_min > 0.0) {
            return Err(Error::validation("ret schedule", "need d_max > d_min > 0"));
        }
        if !(self.t_end > self.t_start) {
            return Err(Error::validation("ret schedule", "need t_end > t_start"));
        }
        if self.n == 0 || !(self.gamma > 0.0) {
            return Err(Error::validation("ret schedule", "need n >= 1 and gamma > 0"));
        }
        Ok(())
    }

    pub fn stair_height(&self) -> f64 {
        (self.d_max - self.d_min) / self.n as f64
    }

    pub fn stair_length(&self) -> f64 {
        (self.t_end - self.t_start) / self.n as f64
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Termination distance at training step `t`.
pub fn ret_threshold(t: f64, s: &RetSchedule) -> f64 {
    if t < s.t_start {
        return s.d_max;
    }
    if t >= s.t_end {
        return s.d_min;
    }
    let (dh, dt) = (s.stair_height(), s.stair_length());
    let drop: f64 = (1..=s.n)
        .map(|i| dh * sigmoid(s.gamma * (t - (s.t_start + i as f64 * dt)) / dt))
        .sum();
    s.d_max - drop
}

/// Links tracked by early termination by default: those carrying a keypoint.
pub fn default_link_set(model: &RobotModel) -> Vec<usize> {
    let mut links: Vec<usize> = model.keypoints.iter().map(|k| k.link).collect();
    links.sort_unstable();
    links.dedup();
    links
}

/// Largest deviation of a link frame origin in `links` between `q` and
/// `q_ref`.
pub fn max_link_deviation(model: &RobotModel, q: &[f64], q_ref: &[f64], links: &[usize]) -> Result<f64> {
    if links.is_empty() {
        return Err(Error::InvalidArgument("termination link set is empty".into()));
    }
    if let Some(&l) = links.iter().find(|&&l| l >= model.n_links()) {
        return Err(Error::InvalidArgument(format!("link index {l} out of range")));
    }
    for (what, x) in [("q", q), ("reference q", q_ref)] {
        if x.len() != model.nq() {
            return Err(Error::dim(what, model.nq(), x.len()));
        }
    }
    let kin = forward_kinematics(model, q);
    let kin_ref = forward_kinematics(model, q_ref);
    Ok(links
        .iter()
        .map(|&l| (kin.positions[l] - kin_ref.positions[l]).norm())
        .fold(0.0, f64::max))
}

/// True iff some link of `links` is farther than `d_bar` from its
/// reference position.
pub fn should_terminate(model: &RobotModel, q: &[f64], q_ref: &[f64], links: &[usize], d_bar: f64) -> Result<bool> {
    Ok(max_link_deviation(model, q, q_ref, links)? > d_bar)
}
