//! Synthetic clips for tests, demos and the shipped example data.
//!
//! Motions are authored as joint-angle keyframes on a robot model, played
//! through forward kinematics, and then uniformly scaled up to a "human"
//! size so that rescaling back onto the robot is a real operation. The
//! skeleton is the model's keypoint set; each keypoint's parent is the
//! closest preceding keypoint on an ancestor link.

use std::collections::BTreeMap;

use nalgebra::{DVector, Matrix2, Vector2, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Feet, MocapClip, SkeletonDoc, SkeletonJoint};
use crate::error::{Error, Result};
use crate::kinodyn::{forward_kinematics, Configuration};
use crate::model::{RobotModel, Side};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthOptions {
    pub rate: f64,
    pub n_frames: usize,
    /// Human size relative to the robot.
    pub human_scale: f64,
    /// Uniform marker noise amplitude, m.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            rate: 120.0,
            // 59 knots of 1/30 s after resampling, i.e. a 60-knot horizon.
            n_frames: 237,
            human_scale: 1.35,
            noise: 0.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motion {
    Standing,
    Kick,
}

/// Standing leg pose shared by both legs: (hip pitch, knee, ankle pitch).
const STANCE: (f64, f64, f64) = (-0.15, 0.3, -0.15);
/// Pelvis drift toward the ball during the swing.
const PELVIS_SHIFT: f64 = 0.06;

/// Piecewise quintic through `(t, value)` keys with zero velocity at each key.
fn track(keys: &[(f64, f64)], t: f64) -> f64 {
    if t <= keys[0].0 {
        return keys[0].1;
    }
    for w in keys.windows(2) {
        let ((t0, a), (t1, b)) = (w[0], w[1]);
        if t <= t1 {
            let s = (t - t0) / (t1 - t0);
            let blend = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
            return a + (b - a) * blend;
        }
    }
    keys[keys.len() - 1].1
}

/// Right-leg instep kick: lift-off at 0.55 s, backswing top at 1.05 s,
/// hip flexion peaking before knee extension, ankle held plantar-flexed
/// through impact.
fn kick_angles(t: f64) -> (f64, f64, f64) {
    let (h0, k0, a0) = STANCE;
    let hip = track(&[(0.55, h0), (1.05, 0.35), (1.50, -0.80)], t);
    let knee = track(&[(0.55, k0), (1.05, 1.5), (1.20, 1.5), (1.55, 0.15)], t);
    let ankle = track(&[(0.55, a0), (1.05, 0.5)], t);
    (hip, knee, ankle)
}

fn pelvis_shift(t: f64) -> f64 {
    track(&[(0.55, 0.0), (1.15, PELVIS_SHIFT)], t)
}

fn set(model: &RobotModel, q: &mut DVector<f64>, joint: &str, value: f64) -> Result<()> {
    let j = model
        .joint_index(joint)
        .ok_or_else(|| Error::InvalidArgument(format!("model has no joint `{joint}`")))?;
    q[RobotModel::q_index(j)] = value;
    Ok(())
}

fn leg(model: &RobotModel, q: &mut DVector<f64>, side: char, (hip, knee, ankle): (f64, f64, f64)) -> Result<()> {
    set(model, q, &format!("{side}_hip_pitch"), hip)?;
    set(model, q, &format!("{side}_knee"), knee)?;
    set(model, q, &format!("{side}_ankle_pitch"), ankle)
}

/// Solve the support-leg hip pitch and knee so the support foot frame
/// stays at `target` (x and z), with the ankle keeping the sole flat.
fn plant_support_foot(model: &RobotModel, q: &mut DVector<f64>, target: &Vector3<f64>) -> Result<()> {
    let foot = model
        .link_index("l_foot")
        .ok_or_else(|| Error::InvalidArgument("model has no link `l_foot`".into()))?;
    let hip = model.joint_index("l_hip_pitch").expect("checked by leg()");
    let knee = model.joint_index("l_knee").expect("checked by leg()");
    let ankle = model.joint_index("l_ankle_pitch").expect("checked by leg()");
    let (qh, qk, qa) = (RobotModel::q_index(hip), RobotModel::q_index(knee), RobotModel::q_index(ankle));
    for _ in 0..50 {
        q[qa] = -(q[qh] + q[qk]);
        let kin = forward_kinematics(model, q.as_slice());
        let p = kin.positions[foot];
        let err = Vector2::new(target.x - p.x, target.z - p.z);
        if err.norm() < 1e-13 {
            return Ok(());
        }
        let jac = kin.point_jacobian(model, foot, &Vector3::zeros());
        // Ankle moves with -(hip + knee), fold it into both columns.
        let col = |j: usize| jac.column(RobotModel::v_index(j)).into_owned();
        let ja = col(ankle);
        let dh = col(hip) - ja;
        let dk = col(knee) - ja;
        let m = Matrix2::new(dh.x, dk.x, dh.z, dk.z);
        let step = m
            .lu()
            .solve(&err)
            .ok_or_else(|| Error::Mocap("support leg is singular".into()))?;
        q[qh] += step.x;
        q[qk] += step.y;
    }
    Err(Error::Mocap("support foot placement did not converge".into()))
}

/// Robot configurations of the authored motion at times `k / rate`.
pub fn robot_motion(model: &RobotModel, motion: Motion, rate: f64, n_frames: usize) -> Result<Vec<DVector<f64>>> {
    let mut stand = Configuration::neutral(model).into_inner();
    leg(model, &mut stand, 'l', STANCE)?;
    leg(model, &mut stand, 'r', STANCE)?;
    // Put the soles on z = 0.
    let kin = forward_kinematics(model, stand.as_slice());
    let lowest = (0..model.n_contacts())
        .map(|c| kin.contact_point(model, c).z)
        .fold(f64::INFINITY, f64::min);
    stand[2] = -lowest;
    let foot = model
        .link_index("l_foot")
        .ok_or_else(|| Error::InvalidArgument("model has no link `l_foot`".into()))?;
    let planted = forward_kinematics(model, stand.as_slice()).positions[foot];

    (0..n_frames)
        .map(|k| {
            let t = k as f64 / rate;
            let mut q = stand.clone();
            if motion == Motion::Kick {
                leg(model, &mut q, 'r', kick_angles(t))?;
                q[0] += pelvis_shift(t);
                plant_support_foot(model, &mut q, &planted)?;
            }
            Ok(q)
        })
        .collect()
}

/// Skeleton parent of each keypoint (see module docs).
fn keypoint_parents(model: &RobotModel) -> Vec<Option<usize>> {
    (0..model.keypoints.len())
        .map(|k| {
            let chain = model.chain(model.keypoints[k].link);
            (0..k).rev().find(|&p| chain.contains(&model.keypoints[p].link))
        })
        .collect()
}

pub fn synth_clip(model: &RobotModel, motion: Motion, opts: &SynthOptions) -> Result<MocapClip> {
    if model.keypoints.is_empty() {
        return Err(Error::InvalidArgument("model has no keypoints".into()));
    }
    let parents = keypoint_parents(model);
    if parents.iter().skip(1).any(Option::is_none) || model.keypoints[0].link != 0 {
        return Err(Error::InvalidArgument(
            "first keypoint must sit on the base and reach every other keypoint".into(),
        ));
    }
    let scale = opts.human_scale;
    let neutral = {
        let q = Configuration::neutral(model);
        let kin = forward_kinematics(model, q.as_slice());
        (0..model.keypoints.len()).map(|k| kin.keypoint(model, k)).collect::<Vec<_>>()
    };
    let joints = model
        .keypoints
        .iter()
        .enumerate()
        .map(|(k, kp)| {
            let offset = match parents[k] {
                Some(p) => (neutral[k] - neutral[p]) * scale,
                None => Vector3::zeros(),
            };
            SkeletonJoint {
                name: kp.name.clone(),
                parent: parents[k],
                offset: [offset.x, offset.y, offset.z],
            }
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let frames = robot_motion(model, motion, opts.rate, opts.n_frames)?
        .iter()
        .map(|q| {
            let kin = forward_kinematics(model, q.as_slice());
            (0..model.keypoints.len())
                .map(|k| {
                    let mut p = kin.keypoint(model, k) * scale;
                    if opts.noise > 0.0 {
                        for c in p.iter_mut() {
                            *c += rng.random_range(-opts.noise..=opts.noise);
                        }
                    }
                    p
                })
                .collect()
        })
        .collect();

    let names: Vec<String> = model.keypoints.iter().map(|k| k.name.clone()).collect();
    let foot = |side: &str| -> Vec<String> {
        ["ankle", "toe"]
            .iter()
            .map(|part| format!("{side}_{part}"))
            .filter(|n| names.contains(n))
            .collect()
    };
    let doc = SkeletonDoc {
        rate: opts.rate,
        joints,
        correspondence: names.iter().map(|n| (n.clone(), n.clone())).collect::<BTreeMap<_, _>>(),
        feet: Feet {
            left: foot("l"),
            right: foot("r"),
        },
        kicking_foot: Side::Right,
    };
    MocapClip::new(doc, frames)
}
