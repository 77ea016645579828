use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::MocapClip;
use crate::error::{Error, Result};
use crate::model::{RobotModel, Side};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactParams {
    /// Max foot height above the estimated ground, m.
    pub height_threshold: f64,
    /// Max foot speed, m/s.
    pub speed_threshold: f64,
    /// Runs shorter than this many frames are flipped.
    pub debounce: usize,
    /// `T_lock = T_impact - lock_lead`, s.
    pub lock_lead: f64,
    /// Percentile of foot heights taken as the ground level.
    pub ground_percentile: f64,
    /// Kick direction used for the impact-time search.
    pub forward: [f64; 3],
}

impl Default for ContactParams {
    fn default() -> Self {
        ContactParams {
            height_threshold: 0.02,
            speed_threshold: 0.05,
            debounce: 3,
            lock_lead: 0.1,
            ground_percentile: 5.0,
            forward: [1.0, 0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KickTimings {
    pub t_swing: f64,
    pub t_lock: f64,
    pub t_impact: f64,
}

/// Fixed contact activity per knot and contact point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactSchedule {
    pub dt: f64,
    /// `active[k][i]`: contact point `i` touches the ground at knot `k`.
    pub active: Vec<Vec<bool>>,
    /// Absent when the kicking foot never leaves the ground.
    pub timings: Option<KickTimings>,
}

/// Half a nanosecond of slack when comparing knot times to phase bounds.
const TIME_EPS: f64 = 1e-9;

impl ContactSchedule {
    /// Every contact active at every knot, no kick.
    pub fn standing(n_knots: usize, n_contacts: usize, dt: f64) -> Self {
        ContactSchedule {
            dt,
            active: vec![vec![true; n_contacts]; n_knots],
            timings: None,
        }
    }

    pub fn n_knots(&self) -> usize {
        self.active.len()
    }

    pub fn knot_time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Gate of the swing-phase terms: `k dt` within `[T_swing, T_impact]`.
    pub fn in_swing(&self, k: usize) -> bool {
        let t = self.knot_time(k);
        self.timings
            .is_some_and(|tm| t >= tm.t_swing - TIME_EPS && t <= tm.t_impact + TIME_EPS)
    }

    /// `k dt` within `[T_lock, T_impact]`.
    pub fn in_lock(&self, k: usize) -> bool {
        let t = self.knot_time(k);
        self.timings
            .is_some_and(|tm| t >= tm.t_lock - TIME_EPS && t <= tm.t_impact + TIME_EPS)
    }

    pub fn validate(&self, model: &RobotModel) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::validation("schedule dt", format!("dt = {}", self.dt)));
        }
        if let Some(row) = self.active.iter().find(|r| r.len() != model.n_contacts()) {
            return Err(Error::dim("contact schedule row", model.n_contacts(), row.len()));
        }
        if let Some(tm) = self.timings {
            let end = self.knot_time(self.n_knots().saturating_sub(1));
            let ok = 0.0 <= tm.t_swing
                && tm.t_swing < tm.t_lock
                && tm.t_lock < tm.t_impact
                && tm.t_impact <= end + TIME_EPS;
            if !ok {
                return Err(Error::validation(
                    "kick timings",
                    format!(
                        "need 0 <= T_swing < T_lock < T_impact <= {end}, got {} / {} / {}",
                        tm.t_swing, tm.t_lock, tm.t_impact
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            dt: f64,
            knot_times: Vec<f64>,
            active: &'a [Vec<bool>],
            timings: Option<KickTimings>,
        }
        let doc = Doc {
            dt: self.dt,
            knot_times: (0..self.n_knots()).map(|k| self.knot_time(k)).collect(),
            active: &self.active,
            timings: self.timings,
        };
        serde_json::to_string_pretty(&doc).expect("plain data")
    }
}

fn percentile(values: &[f64], pct: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (pct / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Central differences, one-sided at the ends.
fn velocities(points: &[Vector3<f64>], rate: f64) -> Vec<Vector3<f64>> {
    let n = points.len();
    (0..n)
        .map(|k| match (k, n) {
            (_, 1) => Vector3::zeros(),
            (0, _) => (points[1] - points[0]) * rate,
            (k, n) if k == n - 1 => (points[k] - points[k - 1]) * rate,
            (k, _) => (points[k + 1] - points[k - 1]) * (0.5 * rate),
        })
        .collect()
}

/// Flip interior runs shorter than `min_len` (first runs of `value`, so
/// flicker of that value is removed before gaps are considered).
fn drop_short_runs(flags: &mut [bool], value: bool, min_len: usize) {
    let n = flags.len();
    let mut k = 0;
    while k < n {
        if flags[k] != value {
            k += 1;
            continue;
        }
        let start = k;
        while k < n && flags[k] == value {
            k += 1;
        }
        let interior = start > 0 && k < n;
        if interior && k - start < min_len {
            flags[start..k].iter_mut().for_each(|f| *f = !value);
        }
    }
}

/// Per-foot contact flags for every frame of the clip, then the kick
/// timings of the kicking foot, expanded onto the model's contact points.
pub fn detect_contacts(
    clip: &MocapClip,
    model: &RobotModel,
    params: &ContactParams,
) -> Result<ContactSchedule> {
    if !(params.height_threshold > 0.0 && params.speed_threshold > 0.0) {
        return Err(Error::InvalidArgument("contact thresholds must be positive".into()));
    }
    if clip.n_frames() < 2 {
        return Err(Error::Mocap("clip too short to contain a swing".into()));
    }

    let feet = [Side::Left, Side::Right];
    let lowest: Vec<Vec<f64>> = feet
        .iter()
        .map(|&side| {
            let joints = clip.foot_joints(side);
            clip.frames
                .iter()
                .map(|f| joints.iter().map(|&j| f[j].z).fold(f64::INFINITY, f64::min))
                .collect()
        })
        .collect();
    let centroid_vel: Vec<Vec<Vector3<f64>>> = feet
        .iter()
        .map(|&side| {
            let joints = clip.foot_joints(side);
            let centroid: Vec<Vector3<f64>> = clip
                .frames
                .iter()
                .map(|f| joints.iter().map(|&j| f[j]).sum::<Vector3<f64>>() / joints.len() as f64)
                .collect();
            velocities(&centroid, clip.rate)
        })
        .collect();
    let all_heights: Vec<f64> = lowest.iter().flatten().copied().collect();
    let ground = percentile(&all_heights, params.ground_percentile);

    let mut flags: Vec<Vec<bool>> = (0..2)
        .map(|f| {
            (0..clip.n_frames())
                .map(|k| {
                    lowest[f][k] - ground < params.height_threshold
                        && centroid_vel[f][k].norm() < params.speed_threshold
                })
                .collect()
        })
        .collect();
    for f in flags.iter_mut() {
        drop_short_runs(f, true, params.debounce);
        drop_short_runs(f, false, params.debounce);
    }
    if flags.iter().all(|f| f.iter().all(|&c| !c)) {
        return Err(Error::Mocap("no contact frames found".into()));
    }

    let kick = feet.iter().position(|&s| s == clip.kicking_foot).expect("two feet");
    let timings = if flags[kick].iter().all(|&c| c) {
        None
    } else {
        let forward = Vector3::from(params.forward);
        let speed: Vec<f64> = centroid_vel[kick].iter().map(|v| v.dot(&forward)).collect();
        let k_impact = (0..speed.len())
            .fold(0, |best, k| if speed[k] > speed[best] { k } else { best });
        let k_swing = (1..=k_impact)
            .rev()
            .find(|&k| flags[kick][k - 1] && !flags[kick][k])
            .ok_or_else(|| Error::Mocap("clip too short to contain a swing".into()))?;
        let t_impact = k_impact as f64 / clip.rate;
        let t_swing = k_swing as f64 / clip.rate;
        let t_lock = t_impact - params.lock_lead;
        if t_lock <= t_swing {
            return Err(Error::Mocap(format!(
                "lock time {t_lock:.3} s precedes swing start {t_swing:.3} s"
            )));
        }
        Some(KickTimings {
            t_swing,
            t_lock,
            t_impact,
        })
    };

    let active = (0..clip.n_frames())
        .map(|k| {
            model
                .contact_points
                .iter()
                .map(|cp| flags[feet.iter().position(|&s| s == cp.foot).expect("two feet")][k])
                .collect()
        })
        .collect();
    let schedule = ContactSchedule {
        dt: 1.0 / clip.rate,
        active,
        timings,
    };
    schedule.validate(model)?;
    Ok(schedule)
}
