//! Motion-capture ingestion: clip IO, resampling, rescaling onto the robot
//! morphology, and contact/timing extraction.
//!
//! A clip is a CSV of `frame,joint,x,y,z` rows (world positions in meters)
//! plus a JSON sidecar describing the skeleton:
//!
//! ```text
//! { "rate": 120.0,
//!   "joints": [{ "name": "pelvis", "parent": null, "offset": [0, 0, 0] }, ...],
//!   "correspondence": { "<mocap joint>": "<robot keypoint>", ... },
//!   "feet": { "left": ["l_ankle", "l_toe"], "right": ["r_ankle", "r_toe"] },
//!   "kicking_foot": "right" }
//! ```
//!
//! Joints are listed parent-first; `offset` is the rest-pose offset from the
//! parent.

mod contacts;
pub mod synth;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinodyn::{forward_kinematics, Configuration};
use crate::model::{RobotModel, Side};

pub use contacts::{detect_contacts, ContactParams, ContactSchedule, KickTimings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonJoint {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feet {
    pub left: Vec<String>,
    pub right: Vec<String>,
}

/// The sidecar document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonDoc {
    pub rate: f64,
    pub joints: Vec<SkeletonJoint>,
    pub correspondence: BTreeMap<String, String>,
    pub feet: Feet,
    pub kicking_foot: Side,
}

/// A uniformly sampled clip of skeleton joint world positions.
#[derive(Debug, Clone, PartialEq)]
pub struct MocapClip {
    pub rate: f64,
    pub joints: Vec<SkeletonJoint>,
    /// `frames[k][j]`: world position of skeleton joint `j` at frame `k`.
    pub frames: Vec<Vec<Vector3<f64>>>,
    /// Mocap joint name -> robot keypoint name.
    pub correspondence: BTreeMap<String, String>,
    pub feet: Feet,
    pub kicking_foot: Side,
}

impl MocapClip {
    pub fn new(doc: SkeletonDoc, frames: Vec<Vec<Vector3<f64>>>) -> Result<Self> {
        let clip = MocapClip {
            rate: doc.rate,
            joints: doc.joints,
            frames,
            correspondence: doc.correspondence,
            feet: doc.feet,
            kicking_foot: doc.kicking_foot,
        };
        clip.validate()?;
        Ok(clip)
    }

    fn validate(&self) -> Result<()> {
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(Error::validation("rate", format!("rate must be positive, got {}", self.rate)));
        }
        if self.joints.is_empty() || self.joints[0].parent.is_some() {
            return Err(Error::validation("skeleton", "first joint must be the root"));
        }
        for (i, j) in self.joints.iter().enumerate().skip(1) {
            match j.parent {
                Some(p) if p < i => {}
                _ => {
                    return Err(Error::validation(
                        "skeleton",
                        format!("joint `{}` must follow its parent", j.name),
                    ))
                }
            }
        }
        for (k, frame) in self.frames.iter().enumerate() {
            if frame.len() != self.joints.len() {
                return Err(Error::validation(
                    "frame joint count",
                    format!("frame {k} has {} joints, skeleton has {}", frame.len(), self.joints.len()),
                ));
            }
            if frame.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
                return Err(Error::NonFinite(format!("clip frame {k}")));
            }
        }
        for name in self.correspondence.keys() {
            if self.joint_index(name).is_none() {
                return Err(Error::validation(
                    "correspondence",
                    format!("`{name}` is not a skeleton joint"),
                ));
            }
        }
        for name in self.feet.left.iter().chain(&self.feet.right) {
            if self.joint_index(name).is_none() {
                return Err(Error::validation("feet", format!("`{name}` is not a skeleton joint")));
            }
        }
        if self.feet.left.is_empty() || self.feet.right.is_empty() {
            return Err(Error::validation("feet", "each foot needs at least one joint"));
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    /// Time of the last frame, in seconds from the first.
    pub fn duration(&self) -> f64 {
        self.frames.len().saturating_sub(1) as f64 / self.rate
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn foot_joints(&self, side: Side) -> Vec<usize> {
        let names = match side {
            Side::Left => &self.feet.left,
            Side::Right => &self.feet.right,
        };
        names.iter().map(|n| self.joint_index(n).expect("validated")).collect()
    }

    pub fn skeleton_doc(&self) -> SkeletonDoc {
        SkeletonDoc {
            rate: self.rate,
            joints: self.joints.clone(),
            correspondence: self.correspondence.clone(),
            feet: self.feet.clone(),
            kicking_foot: self.kicking_foot,
        }
    }

    /// Distance from the root down to the lowest joint in the rest pose.
    pub fn rest_height(&self) -> f64 {
        let mut pos: Vec<Vector3<f64>> = Vec::with_capacity(self.joints.len());
        for j in &self.joints {
            let o = Vector3::from(j.offset);
            pos.push(match j.parent {
                Some(p) => pos[p] + o,
                None => Vector3::zeros(),
            });
        }
        -pos.iter().map(|p| p.z).fold(0.0, f64::min)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    frame: usize,
    joint: String,
    x: f64,
    y: f64,
    z: f64,
}

/// Parse a clip from its CSV body and sidecar document.
pub fn read_clip(csv: impl Read, sidecar: &str) -> Result<MocapClip> {
    let de = &mut serde_json::Deserializer::from_str(sidecar);
    let doc: SkeletonDoc = serde_path_to_error::deserialize(de)
        .map_err(|e| Error::parse(e.path().to_string(), e.into_inner().to_string()))?;
    let names: BTreeMap<&str, usize> = doc
        .joints
        .iter()
        .enumerate()
        .map(|(i, j)| (j.name.as_str(), i))
        .collect();
    let mut frames: Vec<Vec<Option<Vector3<f64>>>> = Vec::new();
    let mut reader = csv::Reader::from_reader(csv);
    for row in reader.deserialize() {
        let row: CsvRow = row?;
        let j = *names
            .get(row.joint.as_str())
            .ok_or_else(|| Error::Mocap(format!("unknown joint `{}` in frame {}", row.joint, row.frame)))?;
        if row.frame >= frames.len() {
            frames.resize(row.frame + 1, vec![None; doc.joints.len()]);
        }
        frames[row.frame][j] = Some(Vector3::new(row.x, row.y, row.z));
    }
    let frames = frames
        .into_iter()
        .enumerate()
        .map(|(k, f)| {
            f.into_iter()
                .enumerate()
                .map(|(j, p)| {
                    p.ok_or_else(|| {
                        Error::validation("frame joint count", format!("frame {k} lacks joint {j}"))
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    MocapClip::new(doc, frames)
}

pub fn load_clip(csv_path: &Path, sidecar_path: &Path) -> Result<MocapClip> {
    let sidecar = std::fs::read_to_string(sidecar_path).map_err(|e| Error::io(sidecar_path, e))?;
    let file = std::fs::File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
    read_clip(file, &sidecar)
}

pub fn write_clip_csv(clip: &MocapClip, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (k, frame) in clip.frames.iter().enumerate() {
        for (j, p) in frame.iter().enumerate() {
            w.serialize(CsvRow {
                frame: k,
                joint: clip.joints[j].name.clone(),
                x: p.x,
                y: p.y,
                z: p.z,
            })?;
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: "<clip csv>".into(),
        source,
    })?;
    Ok(())
}

/// Number of samples covering `[0, duration]` at `rate`.
pub fn sample_count(n_frames: usize, rate: f64, target_rate: f64) -> usize {
    if n_frames == 0 {
        return 0;
    }
    let span = (n_frames - 1) as f64 * target_rate / rate;
    (span + 1e-9).floor() as usize + 1
}

/// Linear interpolation at uniform times `k / target_rate`.
pub fn resample(clip: &MocapClip, target_rate: f64) -> Result<MocapClip> {
    if !(target_rate.is_finite() && target_rate > 0.0) {
        return Err(Error::InvalidArgument(format!("target rate {target_rate} must be positive")));
    }
    if target_rate > clip.rate {
        return Err(Error::InvalidArgument(format!(
            "target rate {target_rate} exceeds clip rate {}",
            clip.rate
        )));
    }
    if target_rate == clip.rate {
        return Ok(clip.clone());
    }
    let n = sample_count(clip.n_frames(), clip.rate, target_rate);
    let last = clip.n_frames() - 1;
    let frames = (0..n)
        .map(|k| {
            let s = k as f64 * clip.rate / target_rate;
            let i = (s.floor() as usize).min(last);
            let frac = s - i as f64;
            if i == last || frac <= 0.0 {
                clip.frames[i].clone()
            } else {
                clip.frames[i]
                    .iter()
                    .zip(&clip.frames[i + 1])
                    .map(|(a, b)| a + (b - a) * frac)
                    .collect()
            }
        })
        .collect();
    Ok(MocapClip {
        rate: target_rate,
        frames,
        ..clip.clone()
    })
}

/// Rebuild every frame from the root down, keeping each bone's direction
/// and setting its length to `lengths[j]` (the bone ending at joint `j`).
/// Bones with `None` keep their length times `root_scale`. The root path is
/// scaled by `root_scale`.
pub fn rescale_bones(clip: &MocapClip, lengths: &[Option<f64>], root_scale: f64) -> MocapClip {
    let frames = clip
        .frames
        .iter()
        .map(|frame| {
            let mut out: Vec<Vector3<f64>> = Vec::with_capacity(frame.len());
            for (j, joint) in clip.joints.iter().enumerate() {
                let p = match joint.parent {
                    None => frame[j] * root_scale,
                    Some(parent) => {
                        let bone = frame[j] - frame[parent];
                        let norm = bone.norm();
                        let len = lengths[j].unwrap_or(norm * root_scale);
                        let dir = if norm > 0.0 { bone / norm } else { Vector3::zeros() };
                        out[parent] + dir * len
                    }
                };
                out.push(p);
            }
            out
        })
        .collect();
    MocapClip {
        frames,
        ..clip.clone()
    }
}

/// Robot keypoint world positions at the neutral configuration.
fn neutral_keypoints(model: &RobotModel) -> Vec<Vector3<f64>> {
    let q = Configuration::neutral(model);
    let kin = forward_kinematics(model, q.as_slice());
    (0..model.keypoints.len()).map(|k| kin.keypoint(model, k)).collect()
}

fn robot_keypoint(model: &RobotModel, name: &str) -> Result<usize> {
    model
        .keypoint_index(name)
        .ok_or_else(|| Error::MissingCorrespondence(name.to_string()))
}

/// Scale the clip onto the robot: bone lengths from the robot's neutral
/// keypoint distances, root path by the ratio of rest heights (root to
/// lowest corresponding point).
pub fn rescale_to_robot(clip: &MocapClip, model: &RobotModel) -> Result<MocapClip> {
    let root_name = &clip.joints[0].name;
    let root_kp = clip
        .correspondence
        .get(root_name)
        .ok_or_else(|| Error::MissingCorrespondence(format!("root joint `{root_name}`")))?;
    let root_kp = robot_keypoint(model, root_kp)?;
    let neutral = neutral_keypoints(model);

    let mut mapped: Vec<Option<usize>> = Vec::with_capacity(clip.joints.len());
    for joint in &clip.joints {
        mapped.push(match clip.correspondence.get(&joint.name) {
            Some(kp) => Some(robot_keypoint(model, kp)?),
            None => None,
        });
    }
    let lengths: Vec<Option<f64>> = clip
        .joints
        .iter()
        .enumerate()
        .map(|(j, joint)| match (joint.parent.and_then(|p| mapped[p]), mapped[j]) {
            (Some(a), Some(b)) => Some((neutral[b] - neutral[a]).norm()),
            _ => None,
        })
        .collect();

    let robot_height = neutral[root_kp].z
        - mapped
            .iter()
            .flatten()
            .map(|&k| neutral[k].z)
            .fold(f64::INFINITY, f64::min);
    let human_height = clip.rest_height();
    if !(human_height > 0.0 && robot_height > 0.0) {
        return Err(Error::Mocap(format!(
            "degenerate rest heights (human {human_height}, robot {robot_height})"
        )));
    }
    Ok(rescale_bones(clip, &lengths, robot_height / human_height))
}

/// Per-frame world targets for the robot keypoints that have a mocap
/// counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointReference {
    /// Model keypoint indices, in model order.
    pub keypoints: Vec<usize>,
    /// `frames[k][i]` is the target for `keypoints[i]` at frame `k`.
    pub frames: Vec<Vec<Vector3<f64>>>,
}

pub fn keypoint_reference(clip: &MocapClip, model: &RobotModel) -> Result<KeypointReference> {
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (joint, kp) in &clip.correspondence {
        let k = robot_keypoint(model, kp)?;
        let j = clip.joint_index(joint).expect("validated");
        pairs.push((k, j));
    }
    pairs.sort_unstable();
    if pairs.is_empty() {
        return Err(Error::MissingCorrespondence("any keypoint".into()));
    }
    Ok(KeypointReference {
        keypoints: pairs.iter().map(|p| p.0).collect(),
        frames: clip
            .frames
            .iter()
            .map(|f| pairs.iter().map(|&(_, j)| f[j]).collect())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_clip(frames: Vec<Vec<Vector3<f64>>>, rate: f64) -> MocapClip {
        let doc = SkeletonDoc {
            rate,
            joints: vec![
                SkeletonJoint { name: "hip".into(), parent: None, offset: [0.0; 3] },
                SkeletonJoint { name: "knee".into(), parent: Some(0), offset: [0.0, 0.0, -0.45] },
            ],
            correspondence: BTreeMap::new(),
            feet: Feet { left: vec!["knee".into()], right: vec!["knee".into()] },
            kicking_foot: Side::Right,
        };
        MocapClip::new(doc, frames).unwrap()
    }

    #[test]
    fn sample_count_fencepost() {
        // 3.7 s spanned at 120 Hz is 445 samples.
        assert_eq!(sample_count(445, 120.0, 30.0), 112);
        assert_eq!(sample_count(1, 120.0, 30.0), 1);
        assert_eq!(sample_count(5, 30.0, 30.0), 5);
    }

    #[test]
    fn femur_scaled_to_two_thirds() {
        let frames = vec![vec![Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.2, 0.1, 0.6)]];
        let clip = line_clip(frames.clone(), 30.0);
        let human = (frames[0][1] - frames[0][0]).norm();
        let out = rescale_bones(&clip, &[None, Some(human * 2.0 / 3.0)], 1.0);
        let expected = frames[0][0] + (frames[0][1] - frames[0][0]) * (2.0 / 3.0);
        assert!((out.frames[0][1] - expected).norm() < 1e-15);
    }

    #[test]
    fn resample_rejects_bad_rates() {
        let clip = line_clip(vec![vec![Vector3::zeros(); 2]; 4], 30.0);
        assert!(resample(&clip, 0.0).is_err());
        assert!(resample(&clip, 60.0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let clip = line_clip(
            vec![
                vec![Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.1, 0.0, 0.55)],
                vec![Vector3::new(0.01, 0.0, 1.0), Vector3::new(0.12, 0.0, 0.56)],
            ],
            120.0,
        );
        let mut buf = Vec::new();
        write_clip_csv(&clip, &mut buf).unwrap();
        let sidecar = serde_json::to_string(&clip.skeleton_doc()).unwrap();
        let back = read_clip(buf.as_slice(), &sidecar).unwrap();
        assert_eq!(back, clip);
    }

    #[test]
    fn unknown_joint_in_csv() {
        let clip = line_clip(vec![vec![Vector3::zeros(); 2]], 30.0);
        let sidecar = serde_json::to_string(&clip.skeleton_doc()).unwrap();
        let csv = "frame,joint,x,y,z\n0,ankle,0,0,0\n";
        assert!(matches!(read_clip(csv.as_bytes(), &sidecar), Err(Error::Mocap(_))));
    }
}
