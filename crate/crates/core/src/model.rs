//! Robot description: a kinematic tree of rigid links driven by revolute
//! joints on top of a floating base.
//!
//! Joint `i` moves link `i`. Joint 0 is always the floating base and link 0
//! is the base link. Actuated joint `j >= 1` owns configuration slot
//! `7 + j - 1` and velocity slot `6 + j - 1`.
//!
//! The interchange format is a single JSON document:
//!
//! ```text
//! { "name": "...",
//!   "links":  [{ "name", "mass", "com": [x,y,z],
//!                "inertia": [Ixx, Ixy, Ixz, Iyy, Iyz, Izz],
//!                "capsule": { "a": [..], "b": [..], "radius": r } }],
//!   "joints": [{ "name", "kind": "floating-base" | "revolute", "parent",
//!                "origin": [..], "axis": [..], "q_min", "q_max",
//!                "v_min", "v_max", "tau_min", "tau_max" }],
//!   "contact_points":  [{ "name", "link", "offset": [..], "foot": "left" | "right" }],
//!   "keypoints":       [{ "name", "link", "offset": [..] }],
//!   "collision_pairs": [[i, j], ...] }
//! ```
//!
//! All quantities are SI; angles are radians.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Capsule {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub name: String,
    pub mass: f64,
    /// CoM in the link frame.
    pub com_offset: Vector3<f64>,
    /// Rotational inertia about the link CoM, expressed in the link frame.
    pub inertia: Matrix3<f64>,
    pub capsule: Option<Capsule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JointKind {
    FloatingBase,
    Revolute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    pub parent: Option<usize>,
    /// Position of the joint (and of the child link frame) in the parent
    /// link frame. Child frames are aligned with their parent at zero angle.
    pub origin: Vector3<f64>,
    pub axis: Vector3<f64>,
    pub q_min: f64,
    pub q_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub tau_min: f64,
    pub tau_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactPoint {
    pub name: String,
    pub link: usize,
    pub offset: Vector3<f64>,
    pub foot: Side,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub name: String,
    pub link: usize,
    pub offset: Vector3<f64>,
}

/// Validated, immutable robot description.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub name: String,
    pub links: Vec<Link>,
    pub joints: Vec<Joint>,
    pub contact_points: Vec<ContactPoint>,
    pub keypoints: Vec<Keypoint>,
    pub collision_pairs: Vec<(usize, usize)>,
    pub total_mass: f64,
    /// For every link, the chain of joints from the root down to the link
    /// itself (root first).
    chains: Vec<Vec<usize>>,
}

impl RobotModel {
    /// Number of actuated joints.
    pub fn n_joints(&self) -> usize {
        self.joints.len() - 1
    }

    pub fn nq(&self) -> usize {
        self.n_joints() + 7
    }

    pub fn nv(&self) -> usize {
        self.n_joints() + 6
    }

    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    pub fn n_contacts(&self) -> usize {
        self.contact_points.len()
    }

    /// Joints between the root and `link`, root first, `link` last.
    pub fn chain(&self, link: usize) -> &[usize] {
        &self.chains[link]
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn keypoint_index(&self, name: &str) -> Option<usize> {
        self.keypoints.iter().position(|k| k.name == name)
    }

    /// Velocity slot of actuated joint `joint` (>= 1).
    pub fn v_index(joint: usize) -> usize {
        6 + joint - 1
    }

    /// Configuration slot of actuated joint `joint` (>= 1).
    pub fn q_index(joint: usize) -> usize {
        7 + joint - 1
    }

    pub fn contacts_on(&self, foot: Side) -> impl Iterator<Item = usize> + '_ {
        self.contact_points
            .iter()
            .enumerate()
            .filter(move |(_, c)| c.foot == foot)
            .map(|(i, _)| i)
    }

    /// Actuated-joint torque limits as `(min, max)` vectors of length `n`.
    pub fn torque_limits(&self) -> (Vec<f64>, Vec<f64>) {
        self.joints[1..]
            .iter()
            .map(|j| (j.tau_min, j.tau_max))
            .unzip()
    }

    pub fn new(
        name: String,
        links: Vec<Link>,
        joints: Vec<Joint>,
        contact_points: Vec<ContactPoint>,
        keypoints: Vec<Keypoint>,
        collision_pairs: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let total_mass = links.iter().map(|l| l.mass).sum();
        let mut model = RobotModel {
            name,
            links,
            joints,
            contact_points,
            keypoints,
            collision_pairs,
            total_mass,
            chains: Vec::new(),
        };
        model.validate()?;
        model.chains = (0..model.links.len())
            .map(|l| {
                let mut chain = vec![l];
                let mut cur = l;
                while let Some(p) = model.joints[cur].parent {
                    chain.push(p);
                    cur = p;
                }
                chain.reverse();
                chain
            })
            .collect();
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.links.is_empty() {
            return Err(Error::validation("non-empty", "model has no links"));
        }
        if self.links.len() != self.joints.len() {
            return Err(Error::validation(
                "one joint per link",
                format!("{} links but {} joints", self.links.len(), self.joints.len()),
            ));
        }
        for (i, link) in self.links.iter().enumerate() {
            if !(link.mass.is_finite() && link.mass >= 0.0) {
                return Err(Error::validation(
                    "mass",
                    format!("link {i} (`{}`) has invalid mass {}", link.name, link.mass),
                ));
            }
            let sym = (link.inertia - link.inertia.transpose()).abs().max();
            if sym > 1e-12 {
                return Err(Error::validation(
                    "inertia symmetric",
                    format!("link {i} inertia asymmetric by {sym:e}"),
                ));
            }
            let eig = SymmetricEigen::new(link.inertia).eigenvalues;
            if eig.iter().any(|&e| e < -1e-12 || !e.is_finite()) {
                return Err(Error::validation(
                    "inertia positive semidefinite",
                    format!("link {i} (`{}`) inertia eigenvalues {:?}", link.name, eig.as_slice()),
                ));
            }
            if let Some(c) = &link.capsule {
                if !(c.radius > 0.0) {
                    return Err(Error::validation(
                        "capsule radius",
                        format!("link {i} capsule radius {} must be > 0", c.radius),
                    ));
                }
            }
        }

        for (i, joint) in self.joints.iter().enumerate() {
            match (i, joint.kind) {
                (0, JointKind::FloatingBase) => {
                    if joint.parent.is_some() {
                        return Err(Error::validation("root", "floating base must not have a parent"));
                    }
                    continue;
                }
                (0, _) => {
                    return Err(Error::validation("root", "joint 0 must be the floating base"));
                }
                (_, JointKind::FloatingBase) => {
                    return Err(Error::validation(
                        "root",
                        format!("joint {i} is a second floating base"),
                    ));
                }
                _ => {}
            }
            let Some(p) = joint.parent else {
                return Err(Error::validation("tree", format!("joint {i} has no parent")));
            };
            if p >= self.joints.len() {
                return Err(Error::validation(
                    "tree",
                    format!("joint {i} parent {p} does not exist"),
                ));
            }
            if (joint.axis.norm() - 1.0).abs() > 1e-12 {
                return Err(Error::validation(
                    "unit axis",
                    format!("joint {i} (`{}`) axis norm {}", joint.name, joint.axis.norm()),
                ));
            }
            for (lo, hi, what) in [
                (joint.q_min, joint.q_max, "q_min <= q_max"),
                (joint.v_min, joint.v_max, "v_min <= v_max"),
                (joint.tau_min, joint.tau_max, "tau_min <= tau_max"),
            ] {
                if !(lo <= hi) {
                    return Err(Error::validation(
                        what,
                        format!("joint {i} (`{}`): {lo} > {hi}", joint.name),
                    ));
                }
            }
        }

        // Walk up from every joint; revisiting a joint means a cycle.
        for start in 0..self.joints.len() {
            let mut seen = vec![false; self.joints.len()];
            let mut cur = start;
            while let Some(p) = self.joints[cur].parent {
                if seen[cur] {
                    return Err(Error::validation(
                        "cycle",
                        format!("joint parent chain starting at {start} revisits joint {cur}"),
                    ));
                }
                seen[cur] = true;
                cur = p;
            }
        }
        for (i, joint) in self.joints.iter().enumerate().skip(1) {
            if joint.parent.is_some_and(|p| p >= i) {
                return Err(Error::validation(
                    "tree order",
                    format!("joint {i} must come after its parent"),
                ));
            }
        }

        for (i, c) in self.contact_points.iter().enumerate() {
            if c.link >= self.links.len() {
                return Err(Error::validation(
                    "contact link exists",
                    format!("contact point {i} references link {}", c.link),
                ));
            }
        }
        for (i, k) in self.keypoints.iter().enumerate() {
            if k.link >= self.links.len() {
                return Err(Error::validation(
                    "keypoint link exists",
                    format!("keypoint {i} references link {}", k.link),
                ));
            }
        }
        for &(a, b) in &self.collision_pairs {
            if a == b {
                return Err(Error::validation(
                    "collision pair distinct",
                    format!("pair ({a}, {b}) references the same link"),
                ));
            }
            for l in [a, b] {
                match self.links.get(l) {
                    None => {
                        return Err(Error::validation(
                            "collision link exists",
                            format!("pair ({a}, {b}) references link {l}"),
                        ))
                    }
                    Some(link) if link.capsule.is_none() => {
                        return Err(Error::validation(
                            "collision capsule",
                            format!("pair ({a}, {b}): link {l} has no capsule"),
                        ))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// JSON schema

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CapsuleDoc {
    a: [f64; 3],
    b: [f64; 3],
    radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkDoc {
    name: String,
    mass: f64,
    #[serde(default)]
    com: [f64; 3],
    inertia: [f64; 6],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    capsule: Option<CapsuleDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointDoc {
    name: String,
    kind: JointKind,
    #[serde(default)]
    parent: Option<usize>,
    #[serde(default)]
    origin: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    axis: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau_max: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContactDoc {
    name: String,
    link: usize,
    offset: [f64; 3],
    foot: Side,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeypointDoc {
    name: String,
    link: usize,
    #[serde(default)]
    offset: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    #[serde(default)]
    name: String,
    links: Vec<LinkDoc>,
    joints: Vec<JointDoc>,
    #[serde(default)]
    contact_points: Vec<ContactDoc>,
    #[serde(default)]
    keypoints: Vec<KeypointDoc>,
    #[serde(default)]
    collision_pairs: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    total_mass: Option<f64>,
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn inertia_from_upper(u: [f64; 6]) -> Matrix3<f64> {
    Matrix3::new(u[0], u[1], u[2], u[1], u[3], u[4], u[2], u[4], u[5])
}

/// Parse and validate a model document.
pub fn load_model(document: &str) -> Result<RobotModel> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let doc: ModelDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::parse(path, e.into_inner().to_string())
    })?;

    let links = doc
        .links
        .into_iter()
        .map(|l| Link {
            name: l.name,
            mass: l.mass,
            com_offset: v3(l.com),
            inertia: inertia_from_upper(l.inertia),
            capsule: l.capsule.map(|c| Capsule {
                a: v3(c.a),
                b: v3(c.b),
                radius: c.radius,
            }),
        })
        .collect();

    let mut joints = Vec::with_capacity(doc.joints.len());
    for (i, j) in doc.joints.into_iter().enumerate() {
        let joint = match j.kind {
            JointKind::FloatingBase => Joint {
                name: j.name,
                kind: j.kind,
                parent: j.parent,
                origin: v3(j.origin),
                axis: Vector3::zeros(),
                q_min: f64::NEG_INFINITY,
                q_max: f64::INFINITY,
                v_min: f64::NEG_INFINITY,
                v_max: f64::INFINITY,
                tau_min: 0.0,
                tau_max: 0.0,
            },
            JointKind::Revolute => {
                let req = |v: Option<f64>, field: &str| {
                    v.ok_or_else(|| Error::parse(format!("joints[{i}].{field}"), "missing field"))
                };
                Joint {
                    axis: v3(j
                        .axis
                        .ok_or_else(|| Error::parse(format!("joints[{i}].axis"), "missing field"))?),
                    q_min: req(j.q_min, "q_min")?,
                    q_max: req(j.q_max, "q_max")?,
                    v_min: req(j.v_min, "v_min")?,
                    v_max: req(j.v_max, "v_max")?,
                    tau_min: req(j.tau_min, "tau_min")?,
                    tau_max: req(j.tau_max, "tau_max")?,
                    name: j.name,
                    kind: j.kind,
                    parent: j.parent,
                    origin: v3(j.origin),
                }
            }
        };
        joints.push(joint);
    }

    let contact_points = doc
        .contact_points
        .into_iter()
        .map(|c| ContactPoint {
            name: c.name,
            link: c.link,
            offset: v3(c.offset),
            foot: c.foot,
        })
        .collect();
    let keypoints = doc
        .keypoints
        .into_iter()
        .map(|k| Keypoint {
            name: k.name,
            link: k.link,
            offset: v3(k.offset),
        })
        .collect();
    let pairs = doc.collision_pairs.into_iter().map(|[a, b]| (a, b)).collect();

    let model = RobotModel::new(doc.name, links, joints, contact_points, keypoints, pairs)?;
    if let Some(declared) = doc.total_mass {
        let rel = (declared - model.total_mass).abs() / model.total_mass.abs().max(f64::MIN_POSITIVE);
        if rel > 1e-9 {
            return Err(Error::validation(
                "total mass",
                format!("declared {declared} but links sum to {}", model.total_mass),
            ));
        }
    }
    Ok(model)
}

/// Serialize a model back into the interchange document.
pub fn model_to_json(model: &RobotModel) -> String {
    let arr = |v: &Vector3<f64>| [v.x, v.y, v.z];
    let doc = ModelDoc {
        name: model.name.clone(),
        links: model
            .links
            .iter()
            .map(|l| LinkDoc {
                name: l.name.clone(),
                mass: l.mass,
                com: arr(&l.com_offset),
                inertia: [
                    l.inertia[(0, 0)],
                    l.inertia[(0, 1)],
                    l.inertia[(0, 2)],
                    l.inertia[(1, 1)],
                    l.inertia[(1, 2)],
                    l.inertia[(2, 2)],
                ],
                capsule: l.capsule.as_ref().map(|c| CapsuleDoc {
                    a: arr(&c.a),
                    b: arr(&c.b),
                    radius: c.radius,
                }),
            })
            .collect(),
        joints: model
            .joints
            .iter()
            .map(|j| match j.kind {
                JointKind::FloatingBase => JointDoc {
                    name: j.name.clone(),
                    kind: j.kind,
                    parent: None,
                    origin: arr(&j.origin),
                    axis: None,
                    q_min: None,
                    q_max: None,
                    v_min: None,
                    v_max: None,
                    tau_min: None,
                    tau_max: None,
                },
                JointKind::Revolute => JointDoc {
                    name: j.name.clone(),
                    kind: j.kind,
                    parent: j.parent,
                    origin: arr(&j.origin),
                    axis: Some(arr(&j.axis)),
                    q_min: Some(j.q_min),
                    q_max: Some(j.q_max),
                    v_min: Some(j.v_min),
                    v_max: Some(j.v_max),
                    tau_min: Some(j.tau_min),
                    tau_max: Some(j.tau_max),
                },
            })
            .collect(),
        contact_points: model
            .contact_points
            .iter()
            .map(|c| ContactDoc {
                name: c.name.clone(),
                link: c.link,
                offset: arr(&c.offset),
                foot: c.foot,
            })
            .collect(),
        keypoints: model
            .keypoints
            .iter()
            .map(|k| KeypointDoc {
                name: k.name.clone(),
                link: k.link,
                offset: arr(&k.offset),
            })
            .collect(),
        collision_pairs: model.collision_pairs.iter().map(|&(a, b)| [a, b]).collect(),
        total_mass: Some(model.total_mass),
    };
    serde_json::to_string_pretty(&doc).expect("model document is always serializable")
}
