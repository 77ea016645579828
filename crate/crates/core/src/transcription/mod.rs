//! Direct transcription of the kick retargeting problem.
//!
//! The trajectory is sampled at `N` knots spaced `dt` apart. Each knot
//! carries the whole-body state `(q, v)` and the centroidal quantities
//! `(r, r', r'', h, h', c_i, f_i)`. Costs and constraints are built as
//! per-knot (or knot-pair) residual blocks so that the Gauss-Newton
//! matrices are banded in the knot-major variable ordering.

mod ops;
mod problem;
mod seed;

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinodyn::integrate_configuration;
use crate::mocap::{
    detect_contacts, keypoint_reference, resample, rescale_to_robot, ContactParams, ContactSchedule,
    KeypointReference, MocapClip,
};
use crate::model::RobotModel;

pub use ops::*;
pub use problem::{build_problem, Block, BlockTerm, NlpProblem, Stage};
pub use seed::{centroidal_seed, fit_configuration, seed_from_reference};

/// Ground height field `gamma_gnd(x, y)`.
pub trait GroundMap: Debug + Send + Sync {
    fn height(&self, x: f64, y: f64) -> f64;
    fn gradient(&self, x: f64, y: f64) -> Vector2<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatGround(pub f64);

impl GroundMap for FlatGround {
    fn height(&self, _x: f64, _y: f64) -> f64 {
        self.0
    }

    fn gradient(&self, _x: f64, _y: f64) -> Vector2<f64> {
        Vector2::zeros()
    }
}

/// Diagonal of a 3x3 weight matrix. A scalar in a config document stands
/// for `w * I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "DiagonalDoc", into = "[f64; 3]")]
pub struct Diagonal3(pub [f64; 3]);

#[derive(Deserialize)]
#[serde(untagged)]
enum DiagonalDoc {
    Scalar(f64),
    Diagonal([f64; 3]),
}

impl From<DiagonalDoc> for Diagonal3 {
    fn from(doc: DiagonalDoc) -> Self {
        match doc {
            DiagonalDoc::Scalar(w) => Diagonal3([w; 3]),
            DiagonalDoc::Diagonal(d) => Diagonal3(d),
        }
    }
}

impl From<Diagonal3> for [f64; 3] {
    fn from(d: Diagonal3) -> Self {
        d.0
    }
}

impl From<f64> for Diagonal3 {
    fn from(w: f64) -> Self {
        Diagonal3([w; 3])
    }
}

impl Diagonal3 {
    pub fn sqrt(&self) -> Vector3<f64> {
        Vector3::new(self.0[0].sqrt(), self.0[1].sqrt(), self.0[2].sqrt())
    }
}

/// Cost weights. All but the impact weight are isotropic (`w * I`); the
/// impact weight acts per world axis on the foot velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Weights {
    pub q_m: f64,
    pub q_i: Diagonal3,
    pub q_v: f64,
    pub q_h: f64,
    pub q_f: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            q_m: 10.0,
            q_i: Diagonal3([1.0; 3]),
            q_v: 1e-2,
            q_h: 1e-2,
            q_f: 1e-5,
        }
    }
}

/// Serializable problem settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    /// Knot rate, Hz; the clip is resampled to it.
    pub knot_rate: f64,
    pub weights: Weights,
    pub mu: f64,
    pub theta_min_deg: f64,
    pub theta_max_deg: f64,
    pub ball_xy: [f64; 2],
    pub target_direction: [f64; 3],
    pub ground_height: f64,
    /// Joints zeroed over the lock window.
    pub ankle_joints: Vec<String>,
    /// Link whose CoM velocity is rewarded during the swing.
    pub kicking_foot_link: String,
    pub contacts: ContactParams,
    /// Start and end with the CoM at rest. Off by default: without it the
    /// boundary accelerations are only pinned by the force regularization.
    pub rest_boundaries: bool,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            knot_rate: 30.0,
            weights: Weights::default(),
            mu: 0.7,
            theta_min_deg: 24.0,
            theta_max_deg: 43.0,
            ball_xy: [0.3, -0.2],
            target_direction: [1.0, 0.0, 0.0],
            ground_height: 0.0,
            ankle_joints: vec!["r_ankle_pitch".into(), "r_ankle_roll".into(), "r_toe".into()],
            kicking_foot_link: "r_foot".into(),
            contacts: ContactParams::default(),
            rest_boundaries: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub model: Arc<RobotModel>,
    pub reference: KeypointReference,
    pub schedule: ContactSchedule,
    pub ball_xy: Vector2<f64>,
    pub target_direction: Vector3<f64>,
    pub weights: Weights,
    pub mu: f64,
    /// Radians.
    pub theta_min: f64,
    pub theta_max: f64,
    pub ground: Arc<dyn GroundMap>,
    pub ankle_joints: Vec<usize>,
    pub kicking_foot_link: usize,
    /// Bounds on the Jacobian-transpose torque estimate, per actuated joint.
    /// Start at the model limits; tightened by the feasibility loop.
    pub torque_bounds: Vec<(f64, f64)>,
    pub rest_boundaries: bool,
}

impl ProblemSpec {
    /// Rescale, resample and segment `clip`, then assemble the spec.
    pub fn from_clip(model: Arc<RobotModel>, clip: &MocapClip, config: &ProblemConfig) -> Result<Self> {
        let scaled = rescale_to_robot(clip, &model)?;
        let knots = resample(&scaled, config.knot_rate)?;
        let schedule = detect_contacts(&knots, &model, &config.contacts)?;
        let reference = keypoint_reference(&knots, &model)?;
        Self::new(model, reference, schedule, config)
    }

    pub fn new(
        model: Arc<RobotModel>,
        reference: KeypointReference,
        schedule: ContactSchedule,
        config: &ProblemConfig,
    ) -> Result<Self> {
        let joint = |name: &str| {
            model
                .joint_index(name)
                .filter(|&j| j > 0)
                .ok_or_else(|| Error::InvalidArgument(format!("model has no actuated joint `{name}`")))
        };
        let ankle_joints = config
            .ankle_joints
            .iter()
            .map(|n| joint(n))
            .collect::<Result<Vec<_>>>()?;
        let kicking_foot_link = model
            .link_index(&config.kicking_foot_link)
            .ok_or_else(|| Error::InvalidArgument(format!("model has no link `{}`", config.kicking_foot_link)))?;
        let torque_bounds = model.joints[1..].iter().map(|j| (j.tau_min, j.tau_max)).collect();
        let spec = ProblemSpec {
            reference,
            schedule,
            ball_xy: Vector2::from(config.ball_xy),
            target_direction: Vector3::from(config.target_direction),
            weights: config.weights,
            mu: config.mu,
            theta_min: config.theta_min_deg.to_radians(),
            theta_max: config.theta_max_deg.to_radians(),
            ground: Arc::new(FlatGround(config.ground_height)),
            ankle_joints,
            kicking_foot_link,
            torque_bounds,
            rest_boundaries: config.rest_boundaries,
            model,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let all = [w.q_m, w.q_i.0[0], w.q_i.0[1], w.q_i.0[2], w.q_v, w.q_h, w.q_f];
        if all.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::validation("weights", "all weights must be positive"));
        }
        if !(self.theta_min < self.theta_max) {
            return Err(Error::validation("angle bounds", "theta_min must be below theta_max"));
        }
        if !(self.mu > 0.0) {
            return Err(Error::validation("friction", "mu must be positive"));
        }
        if self.n_knots() < 2 {
            return Err(Error::validation("knots", "need at least two knots"));
        }
        if self.reference.frames.len() != self.n_knots() {
            return Err(Error::dim("reference frames", self.n_knots(), self.reference.frames.len()));
        }
        if self.torque_bounds.len() != self.model.n_joints() {
            return Err(Error::dim("torque bounds", self.model.n_joints(), self.torque_bounds.len()));
        }
        if (self.target_direction.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::validation("target direction", "must be a unit vector"));
        }
        self.schedule.validate(&self.model)
    }

    pub fn n_knots(&self) -> usize {
        self.schedule.n_knots()
    }

    pub fn dt(&self) -> f64 {
        self.schedule.dt
    }

    /// The CoM of the kicking foot link, in link coordinates.
    pub fn foot_point(&self) -> Vector3<f64> {
        self.model.links[self.kicking_foot_link].com_offset
    }
}

/// One transcription knot.
#[derive(Debug, Clone, PartialEq)]
pub struct Knot {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
    pub r: Vector3<f64>,
    pub rd: Vector3<f64>,
    pub rdd: Vector3<f64>,
    pub h: Vector3<f64>,
    pub hd: Vector3<f64>,
    pub c: Vec<Vector3<f64>>,
    pub f: Vec<Vector3<f64>>,
}

impl Knot {
    pub fn zeros(model: &RobotModel) -> Self {
        let mut q = DVector::zeros(model.nq());
        q[3] = 1.0;
        Knot {
            q,
            v: DVector::zeros(model.nv()),
            r: Vector3::zeros(),
            rd: Vector3::zeros(),
            rdd: Vector3::zeros(),
            h: Vector3::zeros(),
            hd: Vector3::zeros(),
            c: vec![Vector3::zeros(); model.n_contacts()],
            f: vec![Vector3::zeros(); model.n_contacts()],
        }
    }

    /// Move tangent coordinate `i` of `field` by `delta` (`q` moves on the
    /// configuration manifold, everything else additively).
    pub fn nudge(&mut self, field: Field, i: usize, delta: f64) {
        match field {
            Field::Q => {
                let mut dv = vec![0.0; self.v.len()];
                dv[i] = delta;
                self.q = integrate_configuration(self.q.as_slice(), &dv, 1.0);
            }
            Field::V => self.v[i] += delta,
            Field::R => self.r[i] += delta,
            Field::Rd => self.rd[i] += delta,
            Field::Rdd => self.rdd[i] += delta,
            Field::H => self.h[i] += delta,
            Field::Hd => self.hd[i] += delta,
            Field::C => self.c[i / 3][i % 3] += delta,
            Field::F => self.f[i / 3][i % 3] += delta,
        }
    }

    /// Apply a whole tangent step for `field`.
    pub fn retract(&mut self, field: Field, delta: &[f64]) {
        match field {
            Field::Q => self.q = integrate_configuration(self.q.as_slice(), delta, 1.0),
            _ => {
                for (i, d) in delta.iter().enumerate() {
                    self.nudge(field, i, *d);
                }
            }
        }
    }

    /// Ambient coordinates of `field`.
    pub fn values(&self, field: Field) -> Vec<f64> {
        let v3 = |v: &Vector3<f64>| v.as_slice().to_vec();
        let many = |vs: &[Vector3<f64>]| vs.iter().flat_map(|v| v.iter().copied()).collect();
        match field {
            Field::Q => self.q.as_slice().to_vec(),
            Field::V => self.v.as_slice().to_vec(),
            Field::R => v3(&self.r),
            Field::Rd => v3(&self.rd),
            Field::Rdd => v3(&self.rdd),
            Field::H => v3(&self.h),
            Field::Hd => v3(&self.hd),
            Field::C => many(&self.c),
            Field::F => many(&self.f),
        }
    }

    pub fn set_values(&mut self, field: Field, x: &[f64]) {
        let v3 = |x: &[f64]| Vector3::new(x[0], x[1], x[2]);
        let many = |x: &[f64]| x.chunks(3).map(v3).collect();
        match field {
            Field::Q => self.q.copy_from_slice(x),
            Field::V => self.v.copy_from_slice(x),
            Field::R => self.r = v3(x),
            Field::Rd => self.rd = v3(x),
            Field::Rdd => self.rdd = v3(x),
            Field::H => self.h = v3(x),
            Field::Hd => self.hd = v3(x),
            Field::C => self.c = many(x),
            Field::F => self.f = many(x),
        }
    }
}

/// Per-knot variable blocks, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Q,
    V,
    R,
    Rd,
    Rdd,
    H,
    Hd,
    C,
    F,
}

impl Field {
    pub const ALL: [Field; 9] = [
        Field::Q,
        Field::V,
        Field::R,
        Field::Rd,
        Field::Rdd,
        Field::H,
        Field::Hd,
        Field::C,
        Field::F,
    ];

    pub fn tangent_dim(self, model: &RobotModel) -> usize {
        match self {
            Field::Q | Field::V => model.nv(),
            Field::C | Field::F => 3 * model.n_contacts(),
            _ => 3,
        }
    }

    pub fn ambient_dim(self, model: &RobotModel) -> usize {
        match self {
            Field::Q => model.nq(),
            _ => self.tangent_dim(model),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinodynamicTrajectory {
    pub dt: f64,
    pub knots: Vec<Knot>,
}

impl KinodynamicTrajectory {
    pub fn n_knots(&self) -> usize {
        self.knots.len()
    }

    pub fn validate(&self, model: &RobotModel) -> Result<()> {
        if self.knots.len() < 2 {
            return Err(Error::validation("knots", "need at least two knots"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::validation("dt", format!("dt = {}", self.dt)));
        }
        for knot in &self.knots {
            for field in Field::ALL {
                let n = knot.values(field).len();
                if n != field.ambient_dim(model) {
                    return Err(Error::dim(format!("knot field {field:?}"), field.ambient_dim(model), n));
                }
            }
        }
        Ok(())
    }
}

/// Offsets of the decision variables in the flat (knot-major) vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub fields: Vec<Field>,
    pub n_knots: usize,
    tangent_offsets: Vec<(Field, usize, usize)>,
    ambient_offsets: Vec<(Field, usize, usize)>,
    pub knot_tangent: usize,
    pub knot_ambient: usize,
}

impl Layout {
    pub fn new(model: &RobotModel, fields: &[Field], n_knots: usize) -> Self {
        let mut fields = fields.to_vec();
        fields.sort();
        fields.dedup();
        let mut tangent_offsets = Vec::new();
        let mut ambient_offsets = Vec::new();
        let (mut t, mut a) = (0, 0);
        for &f in &fields {
            tangent_offsets.push((f, t, f.tangent_dim(model)));
            ambient_offsets.push((f, a, f.ambient_dim(model)));
            t += f.tangent_dim(model);
            a += f.ambient_dim(model);
        }
        Layout {
            fields,
            n_knots,
            tangent_offsets,
            ambient_offsets,
            knot_tangent: t,
            knot_ambient: a,
        }
    }

    pub fn has(&self, field: Field) -> bool {
        self.fields.contains(&field)
    }

    /// Length of the flat decision vector (quaternions as 4 entries).
    pub fn n_variables(&self) -> usize {
        self.knot_ambient * self.n_knots
    }

    /// Dimension of the tangent space the solver steps in.
    pub fn n_tangent(&self) -> usize {
        self.knot_tangent * self.n_knots
    }

    /// `(offset, dim)` of `field` at knot `k` in the tangent vector.
    pub fn tangent(&self, k: usize, field: Field) -> Option<(usize, usize)> {
        self.tangent_offsets
            .iter()
            .find(|e| e.0 == field)
            .map(|&(_, o, d)| (k * self.knot_tangent + o, d))
    }

    pub fn ambient(&self, k: usize, field: Field) -> Option<(usize, usize)> {
        self.ambient_offsets
            .iter()
            .find(|e| e.0 == field)
            .map(|&(_, o, d)| (k * self.knot_ambient + o, d))
    }

    pub fn flatten(&self, traj: &KinodynamicTrajectory) -> DVector<f64> {
        let mut x = DVector::zeros(self.n_variables());
        for (k, knot) in traj.knots.iter().enumerate() {
            for &f in &self.fields {
                let (o, d) = self.ambient(k, f).expect("own field");
                x.rows_mut(o, d).copy_from_slice(&knot.values(f));
            }
        }
        x
    }

    /// Overwrite the decision fields of `traj` from a flat vector.
    pub fn unflatten(&self, x: &DVector<f64>, traj: &mut KinodynamicTrajectory) -> Result<()> {
        if x.len() != self.n_variables() {
            return Err(Error::dim("flat decision vector", self.n_variables(), x.len()));
        }
        for (k, knot) in traj.knots.iter_mut().enumerate() {
            for &f in &self.fields {
                let (o, d) = self.ambient(k, f).expect("own field");
                knot.set_values(f, x.rows(o, d).as_slice());
            }
        }
        Ok(())
    }

    /// `traj ⊕ dx` over the decision fields.
    pub fn retract(&self, traj: &KinodynamicTrajectory, dx: &[f64]) -> KinodynamicTrajectory {
        let mut out = traj.clone();
        for (k, knot) in out.knots.iter_mut().enumerate() {
            for &f in &self.fields {
                let (o, d) = self.tangent(k, f).expect("own field");
                knot.retract(f, &dx[o..o + d]);
            }
        }
        out
    }
}
