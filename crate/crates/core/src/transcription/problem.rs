use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::ops::*;
use super::seed::seed_from_reference;
use super::{Field, KinodynamicTrajectory, Knot, Layout, ProblemSpec};
use crate::error::{Error, Result};
use crate::kinodyn::{forward_kinematics, integrate_configuration};
use crate::model::RobotModel;
use crate::solver::{Nlp, TermEval, TermKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    /// `q, v` only; contacts enter through forward kinematics.
    KinematicsOnly,
    Full,
}

/// What a block evaluates. Point lists are contact indices.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockTerm {
    Reference,
    Regularization { swing: bool },
    Impact,
    Dynamics,
    CentroidalIntegration,
    Consistency,
    /// `z − γ(x, y)` of the points; equality for active points.
    ContactHeight { points: Vec<usize>, kinematic: bool },
    /// Same value, bounded below by 0, for inactive points.
    Clearance { points: Vec<usize>, kinematic: bool },
    ZeroForce { points: Vec<usize> },
    FrictionCone { points: Vec<usize> },
    /// Spans knots `k, k + 1`.
    NoSlip { points: Vec<usize>, kinematic: bool },
    AnkleLock,
    ApproachAngle,
    JointLimits,
    TorqueProxy,
    Collision,
    PoseIntegration,
    /// Zero momentum `ṙ = h = 0` at the first knot; zero momentum and
    /// momentum rate at the last.
    RestBoundary { last: bool },
}

/// One residual block: rows of a single family over one or two knots.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub term: BlockTerm,
    pub knot: usize,
    pub span: usize,
    /// Fields the block depends on, at every knot of its span.
    pub fields: Vec<Field>,
    pub dim: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub scale: Vec<f64>,
    /// Tangent column of each Jacobian column.
    pub cols: Vec<usize>,
}

const FD_STEP: f64 = 6e-6;
const CURVATURE_STEP: f64 = 1e-4;

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

impl Block {
    pub fn family(&self) -> &'static str {
        match self.term {
            BlockTerm::Reference => "reference",
            BlockTerm::Regularization { .. } => "regularization",
            BlockTerm::Impact => "impact",
            BlockTerm::Dynamics => "dynamics",
            BlockTerm::CentroidalIntegration => "centroidal_integration",
            BlockTerm::Consistency => "consistency",
            BlockTerm::ContactHeight { .. } => "contact_height",
            BlockTerm::Clearance { .. } => "clearance",
            BlockTerm::ZeroForce { .. } => "zero_force",
            BlockTerm::FrictionCone { .. } => "friction_cone",
            BlockTerm::NoSlip { .. } => "no_slip",
            BlockTerm::AnkleLock => "ankle_lock",
            BlockTerm::ApproachAngle => "approach_angle",
            BlockTerm::JointLimits => "joint_limits",
            BlockTerm::TorqueProxy => "torque_proxy",
            BlockTerm::Collision => "collision",
            BlockTerm::PoseIntegration => "pose_integration",
            BlockTerm::RestBoundary { .. } => "rest_boundary",
        }
    }

    pub fn kind(&self) -> TermKind {
        match self.term {
            BlockTerm::Reference | BlockTerm::Regularization { .. } => TermKind::Cost,
            BlockTerm::Impact => TermKind::Concave,
            BlockTerm::Clearance { .. }
            | BlockTerm::FrictionCone { .. }
            | BlockTerm::ApproachAngle
            | BlockTerm::JointLimits
            | BlockTerm::TorqueProxy
            | BlockTerm::Collision => TermKind::Inequality,
            _ => TermKind::Equality,
        }
    }

    fn point(spec: &ProblemSpec, knot: &Knot, i: usize, kinematic: bool) -> Vector3<f64> {
        if kinematic {
            forward_kinematics(&spec.model, knot.q.as_slice()).contact_point(&spec.model, i)
        } else {
            knot.c[i]
        }
    }

    /// Residual rows at `knots = [k, k + span)`.
    pub fn eval(&self, spec: &ProblemSpec, knots: &[Knot]) -> Result<DVector<f64>> {
        let model = &spec.model;
        let kn = &knots[0];
        let out = match &self.term {
            BlockTerm::Reference => {
                let kin = forward_kinematics(model, kn.q.as_slice());
                let s = spec.weights.q_m.sqrt();
                let targets = &spec.reference.frames[self.knot];
                let mut out = Vec::with_capacity(self.dim);
                for (i, &kp) in spec.reference.keypoints.iter().enumerate() {
                    out.extend(((kin.keypoint(model, kp) - targets[i]) * s).iter());
                }
                DVector::from_vec(out)
            }
            BlockTerm::Regularization { swing } => {
                let sv = if *swing { 0.0 } else { spec.weights.q_v.sqrt() };
                let mut out: Vec<f64> = kn.v.iter().map(|x| x * sv).collect();
                if self.fields.contains(&Field::H) {
                    out.extend((kn.h * spec.weights.q_h.sqrt()).iter());
                }
                if self.fields.contains(&Field::F) {
                    let sf = spec.weights.q_f.sqrt();
                    out.extend(kn.f.iter().flat_map(|f| (f * sf).iter().copied().collect::<Vec<_>>()));
                }
                DVector::from_vec(out)
            }
            BlockTerm::Impact => {
                let vel = foot_velocity(model, kn.q.as_slice(), kn.v.as_slice(), spec.kicking_foot_link);
                DVector::from_column_slice(vel.component_mul(&spec.weights.q_i.sqrt()).as_slice())
            }
            BlockTerm::Dynamics => centroidal_dynamics(kn, model.total_mass),
            BlockTerm::CentroidalIntegration => centroidal_integration(kn, &knots[1], spec.dt()),
            BlockTerm::Consistency => residual_consistency(model, kn),
            BlockTerm::ContactHeight { points, kinematic } | BlockTerm::Clearance { points, kinematic } => {
                let kin = kinematic.then(|| forward_kinematics(model, kn.q.as_slice()));
                DVector::from_iterator(
                    points.len(),
                    points.iter().map(|&i| {
                        let p = match &kin {
                            Some(kin) => kin.contact_point(model, i),
                            None => kn.c[i],
                        };
                        p.z - spec.ground.height(p.x, p.y)
                    }),
                )
            }
            BlockTerm::ZeroForce { points } => {
                DVector::from_iterator(3 * points.len(), points.iter().flat_map(|&i| kn.f[i].iter().copied()))
            }
            BlockTerm::FrictionCone { points } => DVector::from_iterator(
                5 * points.len(),
                points.iter().flat_map(|&i| friction_pyramid(&kn.f[i], spec.mu)),
            ),
            BlockTerm::NoSlip { points, kinematic } => {
                let mut out = Vec::with_capacity(3 * points.len());
                for &i in points {
                    let d = Self::point(spec, &knots[1], i, *kinematic) - Self::point(spec, kn, i, *kinematic);
                    out.extend(d.iter());
                }
                DVector::from_vec(out)
            }
            BlockTerm::AnkleLock => DVector::from_iterator(
                spec.ankle_joints.len(),
                spec.ankle_joints.iter().map(|&j| kn.v[RobotModel::v_index(j)]),
            ),
            BlockTerm::ApproachAngle => {
                let angle = approach_angle(&Vector2::new(kn.q[0], kn.q[1]), &spec.ball_xy)?;
                DVector::from_element(1, angle)
            }
            BlockTerm::JointLimits => {
                let n = model.n_joints();
                DVector::from_iterator(
                    2 * n,
                    (1..=n)
                        .map(|j| kn.q[RobotModel::q_index(j)])
                        .chain((1..=n).map(|j| kn.v[RobotModel::v_index(j)])),
                )
            }
            BlockTerm::TorqueProxy => {
                let kin = forward_kinematics(model, kn.q.as_slice());
                torque_proxy(model, &kin, &kn.f)
            }
            BlockTerm::Collision => {
                let kin = forward_kinematics(model, kn.q.as_slice());
                DVector::from_vec(collision_margins(model, &kin))
            }
            BlockTerm::RestBoundary { last } => {
                let mut out: Vec<f64> = kn.rd.iter().chain(kn.h.iter()).copied().collect();
                if *last {
                    out.extend(kn.rdd.iter().chain(kn.hd.iter()));
                }
                DVector::from_vec(out)
            }
            BlockTerm::PoseIntegration => {
                residual_pose_integration(kn.q.as_slice(), kn.v.as_slice(), knots[1].q.as_slice(), spec.dt())
            }
        };
        if out.len() != self.dim {
            return Err(Error::dim(format!("{} residual", self.family()), self.dim, out.len()));
        }
        Ok(out)
    }

    /// Exact partial derivative with respect to `field` at knot offset
    /// `ki`, where one is implemented.
    fn analytic_partial(&self, spec: &ProblemSpec, knots: &[Knot], ki: usize, field: Field) -> Option<DMatrix<f64>> {
        let model = &spec.model;
        let cols = field.tangent_dim(model);
        let mut jac = DMatrix::zeros(self.dim, cols);
        let kn = &knots[ki];
        let eye3 = Matrix3::<f64>::identity();
        match (&self.term, field) {
            (BlockTerm::Reference, Field::Q) => {
                let kin = forward_kinematics(model, kn.q.as_slice());
                let s = spec.weights.q_m.sqrt();
                for (i, &kp) in spec.reference.keypoints.iter().enumerate() {
                    let k = &model.keypoints[kp];
                    jac.rows_mut(3 * i, 3).copy_from(&(kin.point_jacobian(model, k.link, &k.offset) * s));
                }
            }
            (BlockTerm::Regularization { swing }, _) => {
                let (row, s) = match field {
                    Field::V => (0, if *swing { 0.0 } else { spec.weights.q_v.sqrt() }),
                    Field::H => (model.nv(), spec.weights.q_h.sqrt()),
                    Field::F => (model.nv() + if self.fields.contains(&Field::H) { 3 } else { 0 }, spec.weights.q_f.sqrt()),
                    _ => return None,
                };
                for c in 0..cols {
                    jac[(row + c, c)] = s;
                }
            }
            (BlockTerm::Impact, Field::V) => {
                let kin = forward_kinematics(model, kn.q.as_slice());
                let link = spec.kicking_foot_link;
                let j = kin.point_jacobian(model, link, &model.links[link].com_offset);
                jac.copy_from(&(Matrix3::from_diagonal(&spec.weights.q_i.sqrt()) * j));
            }
            (BlockTerm::Dynamics, _) => {
                let m = model.total_mass;
                match field {
                    Field::Rdd => jac.view_mut((0, 0), (3, 3)).copy_from(&(eye3 * m)),
                    Field::Hd => jac.view_mut((3, 0), (3, 3)).copy_from(&eye3),
                    Field::R => {
                        let s: Matrix3<f64> = kn.f.iter().map(|f| -skew(f)).sum();
                        jac.view_mut((3, 0), (3, 3)).copy_from(&s);
                    }
                    Field::C => {
                        for (i, f) in kn.f.iter().enumerate() {
                            jac.view_mut((3, 3 * i), (3, 3)).copy_from(&skew(f));
                        }
                    }
                    Field::F => {
                        for (i, c) in kn.c.iter().enumerate() {
                            jac.view_mut((0, 3 * i), (3, 3)).copy_from(&(-eye3));
                            jac.view_mut((3, 3 * i), (3, 3)).copy_from(&(-skew(&(c - kn.r))));
                        }
                    }
                    _ => return None,
                }
            }
            (BlockTerm::CentroidalIntegration, _) => {
                let dt = spec.dt();
                // Rows: r (0..3), r' (3..6), h (6..9).
                let entries: &[(usize, f64)] = match (ki, field) {
                    (0, Field::R) => &[(0, -1.0)],
                    (0, Field::Rd) => &[(0, -dt), (3, -1.0)],
                    (0, Field::Rdd) => &[(3, -dt)],
                    (0, Field::H) => &[(6, -1.0)],
                    (0, Field::Hd) => &[(6, -dt)],
                    (1, Field::R) => &[(0, 1.0)],
                    (1, Field::Rd) => &[(3, 1.0)],
                    (1, Field::H) => &[(6, 1.0)],
                    (1, Field::Rdd) | (1, Field::Hd) => &[],
                    _ => return None,
                };
                for &(row, v) in entries {
                    jac.view_mut((row, 0), (3, 3)).copy_from(&(eye3 * v));
                }
            }
            (BlockTerm::Consistency, Field::H | Field::R | Field::C | Field::V) => match field {
                Field::H => jac.view_mut((0, 0), (3, 3)).copy_from(&eye3),
                Field::R => jac.view_mut((3, 0), (3, 3)).copy_from(&eye3),
                Field::C => {
                    for c in 0..cols {
                        jac[(6 + c, c)] = 1.0;
                    }
                }
                Field::V => {
                    let cmm = forward_kinematics(model, kn.q.as_slice()).centroidal_momentum_matrix(model);
                    jac.rows_mut(0, 3).copy_from(&(-cmm.fixed_rows::<3>(0)));
                }
                _ => return None,
            },
            (BlockTerm::ContactHeight { points, kinematic } | BlockTerm::Clearance { points, kinematic }, _) => {
                let kin = forward_kinematics(model, kn.q.as_slice());
                for (r, &i) in points.iter().enumerate() {
                    let p = if *kinematic { kin.contact_point(model, i) } else { kn.c[i] };
                    let g = spec.ground.gradient(p.x, p.y);
                    let dz = Vector3::new(-g.x, -g.y, 1.0);
                    match (field, kinematic) {
                        (Field::Q, true) => {
                            let cp = &model.contact_points[i];
                            let j = kin.point_jacobian(model, cp.link, &cp.offset);
                            jac.row_mut(r).copy_from(&(dz.transpose() * j));
                        }
                        (Field::C, false) => {
                            for a in 0..3 {
                                jac[(r, 3 * i + a)] = dz[a];
                            }
                        }
                        _ => return None,
                    }
                }
            }
            (BlockTerm::ZeroForce { points }, Field::F) => {
                for (r, &i) in points.iter().enumerate() {
                    jac.view_mut((3 * r, 3 * i), (3, 3)).copy_from(&eye3);
                }
            }
            (BlockTerm::FrictionCone { points }, Field::F) => {
                let mu = spec.mu;
                let rows = [[1.0, 0.0, -mu], [-1.0, 0.0, -mu], [0.0, 1.0, -mu], [0.0, -1.0, -mu], [0.0, 0.0, -1.0]];
                for (r, &i) in points.iter().enumerate() {
                    for (a, row) in rows.iter().enumerate() {
                        for b in 0..3 {
                            jac[(5 * r + a, 3 * i + b)] = row[b];
                        }
                    }
                }
            }
            (BlockTerm::NoSlip { points, kinematic }, _) => {
                let sign = if ki == 1 { 1.0 } else { -1.0 };
                let kin = forward_kinematics(model, kn.q.as_slice());
                for (r, &i) in points.iter().enumerate() {
                    match (field, kinematic) {
                        (Field::Q, true) => {
                            let cp = &model.contact_points[i];
                            let j = kin.point_jacobian(model, cp.link, &cp.offset);
                            jac.rows_mut(3 * r, 3).copy_from(&(j * sign));
                        }
                        (Field::C, false) => jac.view_mut((3 * r, 3 * i), (3, 3)).copy_from(&(eye3 * sign)),
                        _ => return None,
                    }
                }
            }
            (BlockTerm::RestBoundary { last }, _) => {
                let row = match field {
                    Field::Rd => 0,
                    Field::H => 3,
                    Field::Rdd if *last => 6,
                    Field::Hd if *last => 9,
                    _ => return None,
                };
                jac.view_mut((row, 0), (3, 3)).copy_from(&eye3);
            }
            (BlockTerm::AnkleLock, Field::V) => {
                for (r, &j) in spec.ankle_joints.iter().enumerate() {
                    jac[(r, RobotModel::v_index(j))] = 1.0;
                }
            }
            (BlockTerm::JointLimits, Field::Q | Field::V) => {
                let n = model.n_joints();
                let row0 = if field == Field::Q { 0 } else { n };
                for j in 1..=n {
                    jac[(row0 + j - 1, RobotModel::v_index(j))] = 1.0;
                }
            }
            (BlockTerm::Consistency, Field::Q) => {
                // Momentum rows depend on q through A(q) v; differenced.
                jac = self.numeric_columns(spec, knots, ki, field, 0..cols).ok()?;
                let kin = forward_kinematics(model, kn.q.as_slice());
                jac.rows_mut(3, 3).copy_from(&(-kin.com_jacobian(model)));
                for (i, cp) in model.contact_points.iter().enumerate() {
                    jac.rows_mut(6 + 3 * i, 3).copy_from(&(-kin.point_jacobian(model, cp.link, &cp.offset)));
                }
            }
            (BlockTerm::PoseIntegration, Field::Q | Field::V) => {
                let nv = model.nv();
                let (s, rot) = match (ki, field) {
                    (0, Field::Q) => (-1.0, true),
                    (0, Field::V) => (-spec.dt(), true),
                    (1, Field::Q) => (1.0, true),
                    _ => (0.0, false),
                };
                for c in (0..3).chain(6..nv) {
                    jac[(c, c)] = s;
                }
                if rot {
                    let rc = self.numeric_columns(spec, knots, ki, field, 3..6).ok()?;
                    jac.view_mut((3, 3), (3, 3)).copy_from(&rc.view((3, 3), (3, 3)));
                }
            }
            (BlockTerm::TorqueProxy, Field::Q) => {
                // τ_j = −a_j · ((p − o_j) × f) summed over contacts below joint j.
                let kin = forward_kinematics(model, kn.q.as_slice());
                let nv = model.nv();
                for (i, f) in kn.f.iter().enumerate() {
                    if f.iter().all(|x| *x == 0.0) {
                        continue;
                    }
                    let cp = &model.contact_points[i];
                    let p = kin.contact_point(model, i);
                    let jp = kin.point_jacobian(model, cp.link, &cp.offset);
                    for &j in &model.chain(cp.link)[1..] {
                        let axis = kin.joint_axis(model, j);
                        let o = kin.positions[j];
                        let w = kin.angular_jacobian(model, j);
                        let mut jo = Matrix3xX::zeros(nv);
                        kin.accumulate_point_jacobian(model, j, &o, 1.0, &mut jo);
                        let arm = (p - o).cross(f);
                        let row = RobotModel::v_index(j) - 6;
                        for c in 0..nv {
                            let da = w.column(c).cross(&axis);
                            let dp = jp.column(c) - jo.column(c);
                            jac[(row, c)] -= da.dot(&arm) + axis.dot(&dp.cross(f));
                        }
                    }
                }
            }
            (BlockTerm::TorqueProxy, Field::F) => {
                let kin = forward_kinematics(model, kn.q.as_slice());
                let n = model.n_joints();
                for (i, cp) in model.contact_points.iter().enumerate() {
                    let j = kin.point_jacobian(model, cp.link, &cp.offset);
                    for row in 0..n {
                        for a in 0..3 {
                            jac[(row, 3 * i + a)] = -j[(a, 6 + row)];
                        }
                    }
                }
            }
            _ => return None,
        }
        Some(jac)
    }

    /// Central differences with respect to `field` at knot offset `ki`.
    pub fn numeric_partial(&self, spec: &ProblemSpec, knots: &[Knot], ki: usize, field: Field) -> Result<DMatrix<f64>> {
        self.numeric_columns(spec, knots, ki, field, 0..field.tangent_dim(&spec.model))
    }

    /// Central differences for a subset of the columns; the rest stay zero.
    fn numeric_columns(
        &self,
        spec: &ProblemSpec,
        knots: &[Knot],
        ki: usize,
        field: Field,
        columns: std::ops::Range<usize>,
    ) -> Result<DMatrix<f64>> {
        let cols = field.tangent_dim(&spec.model);
        let mut jac = DMatrix::zeros(self.dim, cols);
        let mut work = knots.to_vec();
        for c in columns {
            work[ki] = knots[ki].clone();
            work[ki].nudge(field, c, FD_STEP);
            let plus = self.eval(spec, &work)?;
            work[ki] = knots[ki].clone();
            work[ki].nudge(field, c, -FD_STEP);
            let minus = self.eval(spec, &work)?;
            jac.set_column(c, &((plus - minus) / (2.0 * FD_STEP)));
        }
        Ok(jac)
    }

    /// Jacobian over all `(knot, field)` columns of the block.
    pub fn jacobian(&self, spec: &ProblemSpec, knots: &[Knot]) -> Result<DMatrix<f64>> {
        let parts = (0..self.span)
            .flat_map(|ki| self.fields.iter().map(move |&f| (ki, f)))
            .map(|(ki, f)| match self.analytic_partial(spec, knots, ki, f) {
                Some(j) => Ok(j),
                None => self.numeric_partial(spec, knots, ki, f),
            })
            .collect::<Result<Vec<_>>>()?;
        let total: usize = parts.iter().map(|p| p.ncols()).sum();
        let mut jac = DMatrix::zeros(self.dim, total);
        let mut c = 0;
        for p in parts {
            jac.columns_mut(c, p.ncols()).copy_from(&p);
            c += p.ncols();
        }
        Ok(jac)
    }

    /// `(knot offset, field)` pairs the Jacobian depends on; the rest of the
    /// block is linear in its variables.
    fn curved_fields(&self) -> &'static [(usize, Field)] {
        match self.term {
            BlockTerm::Reference | BlockTerm::Consistency | BlockTerm::TorqueProxy => &[(0, Field::Q)],
            BlockTerm::Dynamics => &[(0, Field::F)],
            _ => &[],
        }
    }

    /// Second-order part `Σ y_i ∇²c_i` of the block in its local columns,
    /// by central differences of `J^T y` over the curved fields.
    pub fn curvature(&self, spec: &ProblemSpec, knots: &[Knot], y: &[f64]) -> Result<Option<DMatrix<f64>>> {
        let curved = self.curved_fields();
        if curved.is_empty() || y.iter().all(|v| *v == 0.0) {
            return Ok(None);
        }
        if self.term == BlockTerm::Consistency {
            return Ok(Some(self.consistency_curvature(spec, &knots[0], y)));
        }
        let model = &spec.model;
        let n = self.cols.len();
        let y = DVector::from_column_slice(y);
        let mut h = DMatrix::<f64>::zeros(n, n);
        let mut in_set = vec![false; n];
        let mut offset = 0;
        for ki in 0..self.span {
            for &field in &self.fields {
                let dim = field.tangent_dim(model);
                if curved.contains(&(ki, field)) {
                    let mut work = knots.to_vec();
                    for c in 0..dim {
                        work[ki] = knots[ki].clone();
                        work[ki].nudge(field, c, CURVATURE_STEP);
                        let plus = self.jacobian(spec, &work)?.tr_mul(&y);
                        work[ki] = knots[ki].clone();
                        work[ki].nudge(field, c, -CURVATURE_STEP);
                        let minus = self.jacobian(spec, &work)?.tr_mul(&y);
                        h.set_column(offset + c, &((plus - minus) / (2.0 * CURVATURE_STEP)));
                        in_set[offset + c] = true;
                    }
                }
                offset += dim;
            }
        }
        for a in 0..n {
            for b in 0..a {
                let v = match (in_set[a], in_set[b]) {
                    (true, true) => 0.5 * (h[(a, b)] + h[(b, a)]),
                    (true, false) => h[(b, a)],
                    (false, true) => h[(a, b)],
                    (false, false) => 0.0,
                };
                h[(a, b)] = v;
                h[(b, a)] = v;
            }
        }
        Ok(Some(h))
    }

    fn local_offset(&self, model: &RobotModel, ki: usize, field: Field) -> usize {
        let per_knot: usize = self.fields.iter().map(|f| f.tangent_dim(model)).sum();
        ki * per_knot + self.fields.iter().take_while(|f| **f != field).map(|f| f.tangent_dim(model)).sum::<usize>()
    }

    /// Consistency is linear in `h, r, c` and in `v` for fixed `q`, so only
    /// the `q q` and `q v` blocks are nonzero. Both come from differences of
    /// the scalar `y^T c(q, v)`, which needs no Jacobians.
    fn consistency_curvature(&self, spec: &ProblemSpec, kn: &Knot, y: &[f64]) -> DMatrix<f64> {
        let model = &spec.model;
        let nv = model.nv();
        let yh = Vector3::new(y[0], y[1], y[2]);
        let yr = Vector3::new(y[3], y[4], y[5]);
        let psi = |dq: &[f64]| -> f64 {
            let q = integrate_configuration(kn.q.as_slice(), dq, 1.0);
            let kin = forward_kinematics(model, q.as_slice());
            let mut total = -yh.dot(&kin.centroidal_momentum(model, kn.v.as_slice()).0) - yr.dot(&kin.center_of_mass(model));
            for i in 0..model.n_contacts() {
                total -= Vector3::new(y[6 + 3 * i], y[7 + 3 * i], y[8 + 3 * i]).dot(&kin.contact_point(model, i));
            }
            total
        };
        let e = CURVATURE_STEP;
        let mut dq = vec![0.0; nv];
        let center = psi(&dq);
        let mut hqq = DMatrix::<f64>::zeros(nv, nv);
        for a in 0..nv {
            dq[a] = e;
            let plus = psi(&dq);
            dq[a] = -e;
            let minus = psi(&dq);
            dq[a] = 0.0;
            hqq[(a, a)] = (plus - 2.0 * center + minus) / (e * e);
            for b in 0..a {
                let mut corner = |sa: f64, sb: f64| {
                    dq[a] = sa * e;
                    dq[b] = sb * e;
                    let v = psi(&dq);
                    dq[a] = 0.0;
                    dq[b] = 0.0;
                    v
                };
                let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0)) / (4.0 * e * e);
                hqq[(a, b)] = v;
                hqq[(b, a)] = v;
            }
        }
        // d/dq of -A_ang(q)^T y_h, one unit velocity at a time.
        let mut hqv = DMatrix::<f64>::zeros(nv, nv);
        let mut unit = vec![0.0; nv];
        for a in 0..nv {
            let mut side = |s: f64| -> Vec<f64> {
                dq[a] = s * e;
                let q = integrate_configuration(kn.q.as_slice(), &dq, 1.0);
                dq[a] = 0.0;
                let kin = forward_kinematics(model, q.as_slice());
                (0..nv)
                    .map(|b| {
                        unit[b] = 1.0;
                        let l = kin.centroidal_momentum(model, &unit).0;
                        unit[b] = 0.0;
                        -yh.dot(&l)
                    })
                    .collect()
            };
            let (plus, minus) = (side(1.0), side(-1.0));
            for b in 0..nv {
                hqv[(a, b)] = (plus[b] - minus[b]) / (2.0 * e);
            }
        }
        let n = self.cols.len();
        let (oq, ov) = (self.local_offset(model, 0, Field::Q), self.local_offset(model, 0, Field::V));
        let mut h = DMatrix::<f64>::zeros(n, n);
        h.view_mut((oq, oq), (nv, nv)).copy_from(&hqq);
        h.view_mut((oq, ov), (nv, nv)).copy_from(&hqv);
        h.view_mut((ov, oq), (nv, nv)).copy_from(&hqv.transpose());
        h
    }

    /// Same column layout as `jacobian`, but entirely by finite differences.
    pub fn numeric_jacobian(&self, spec: &ProblemSpec, knots: &[Knot]) -> Result<DMatrix<f64>> {
        let parts = (0..self.span)
            .flat_map(|ki| self.fields.iter().map(move |&f| (ki, f)))
            .map(|(ki, f)| self.numeric_partial(spec, knots, ki, f))
            .collect::<Result<Vec<_>>>()?;
        let total: usize = parts.iter().map(|p| p.ncols()).sum();
        let mut jac = DMatrix::zeros(self.dim, total);
        let mut c = 0;
        for p in parts {
            jac.columns_mut(c, p.ncols()).copy_from(&p);
            c += p.ncols();
        }
        Ok(jac)
    }
}

/// The transcribed program for one stage.
#[derive(Debug, Clone)]
pub struct NlpProblem {
    pub spec: Arc<ProblemSpec>,
    pub stage: Stage,
    pub layout: Layout,
    pub blocks: Vec<Block>,
    pub initial: KinodynamicTrajectory,
}

impl NlpProblem {
    /// Length of the flat decision vector.
    pub fn n_variables(&self) -> usize {
        self.layout.n_variables()
    }

    /// Rows of (costs, equalities, inequalities).
    pub fn n_residuals(&self) -> (usize, usize, usize) {
        let mut n = (0, 0, 0);
        for b in &self.blocks {
            match b.kind() {
                TermKind::Cost | TermKind::Concave => n.0 += b.dim,
                TermKind::Equality => n.1 += b.dim,
                TermKind::Inequality => n.2 += b.dim,
            }
        }
        n
    }

    pub fn knots_of<'a>(&self, b: &Block, traj: &'a KinodynamicTrajectory) -> &'a [Knot] {
        &traj.knots[b.knot..b.knot + b.span]
    }

    pub fn evaluate_block(&self, b: &Block, traj: &KinodynamicTrajectory, jacobian: bool) -> Result<TermEval> {
        let knots = self.knots_of(b, traj);
        let values = b.eval(&self.spec, knots)?;
        let jacobian = if jacobian {
            Some(b.jacobian(&self.spec, knots)?)
        } else {
            None
        };
        Ok(TermEval {
            family: b.family(),
            kind: b.kind(),
            values,
            lower: b.lower.clone(),
            upper: b.upper.clone(),
            scale: b.scale.clone(),
            cols: b.cols.clone(),
            jacobian,
        })
    }

    /// Objective value `J` (sum of all cost terms).
    pub fn cost(&self, traj: &KinodynamicTrajectory) -> Result<f64> {
        let mut total = 0.0;
        for b in self.blocks.iter().filter(|b| matches!(b.kind(), TermKind::Cost | TermKind::Concave)) {
            total += self.evaluate_block(b, traj, false)?.cost();
        }
        Ok(total)
    }

    fn check_trajectory(&self, traj: &KinodynamicTrajectory) -> Result<()> {
        traj.validate(&self.spec.model)?;
        if traj.n_knots() != self.layout.n_knots {
            return Err(Error::dim("trajectory knots", self.layout.n_knots, traj.n_knots()));
        }
        Ok(())
    }
}

impl Nlp for NlpProblem {
    type Point = KinodynamicTrajectory;

    fn n_tangent(&self) -> usize {
        self.layout.n_tangent()
    }

    fn retract(&self, x: &KinodynamicTrajectory, dx: &[f64]) -> KinodynamicTrajectory {
        self.layout.retract(x, dx)
    }

    fn evaluate(&self, x: &KinodynamicTrajectory, jacobians: bool) -> Result<Vec<TermEval>> {
        self.check_trajectory(x)?;
        self.blocks.iter().map(|b| self.evaluate_block(b, x, jacobians)).collect()
    }

    fn curvature(&self, x: &KinodynamicTrajectory, term: usize, y: &[f64]) -> Result<Option<DMatrix<f64>>> {
        let b = &self.blocks[term];
        b.curvature(&self.spec, self.knots_of(b, x), y)
    }
}

struct Builder<'a> {
    layout: &'a Layout,
    blocks: Vec<Block>,
}

impl Builder<'_> {
    fn push(&mut self, term: BlockTerm, knot: usize, span: usize, fields: &[Field], dim: usize, bounds: Option<Vec<(f64, f64)>>, scale: Vec<f64>) {
        if dim == 0 {
            return;
        }
        let mut fields = fields.to_vec();
        fields.sort();
        let mut cols = Vec::new();
        for ki in 0..span {
            for &f in &fields {
                let (o, d) = self.layout.tangent(knot + ki, f).expect("field in stage layout");
                cols.extend(o..o + d);
            }
        }
        let (lower, upper) = bounds.map(|b| b.into_iter().unzip()).unwrap_or_default();
        debug_assert!(scale.is_empty() || scale.len() == dim);
        self.blocks.push(Block {
            term,
            knot,
            span,
            fields,
            dim,
            lower,
            upper,
            scale,
            cols,
        });
    }
}

/// Assemble the program. The kinematics-only stage is seeded from a
/// per-frame fit to the reference when `initial` is absent; the full stage
/// requires a warm start.
pub fn build_problem(spec: Arc<ProblemSpec>, stage: Stage, initial: Option<KinodynamicTrajectory>) -> Result<NlpProblem> {
    spec.validate()?;
    let model = &spec.model;
    let n_knots = spec.n_knots();
    let initial = match (initial, stage) {
        (Some(t), _) => t,
        (None, Stage::KinematicsOnly) => seed_from_reference(&spec)?,
        (None, Stage::Full) => {
            return Err(Error::InvalidArgument("the full stage needs an initial trajectory".into()));
        }
    };
    initial.validate(model)?;
    if initial.n_knots() != n_knots {
        return Err(Error::dim("initial trajectory knots", n_knots, initial.n_knots()));
    }
    if (initial.dt - spec.dt()).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "initial trajectory dt {} differs from the schedule dt {}",
            initial.dt,
            spec.dt()
        )));
    }
    let fields: &[Field] = match stage {
        Stage::KinematicsOnly => &[Field::Q, Field::V],
        Stage::Full => &Field::ALL,
    };
    let layout = Layout::new(model, fields, n_knots);
    let full = stage == Stage::Full;
    let kinematic = !full;
    let dt = spec.dt();
    let m = model.total_mass;
    let n = model.n_joints();
    let nv = model.nv();
    let nc = model.n_contacts();
    let force_scale = 1.0 / (m * 9.81);
    let moment_scale = 1.0 / (m * 9.81 * 0.1);
    // Rows are scaled to velocity-like units so that, at every penalty, the
    // integration constraints bind harder than the swing reward pulls.
    let momentum_scale = 1.0 / (m * 0.1);
    let ones = |d: usize| vec![1.0; d];
    let mut b = Builder {
        layout: &layout,
        blocks: Vec::new(),
    };

    for k in 0..n_knots {
        let active = &spec.schedule.active[k];
        let on: Vec<usize> = (0..nc).filter(|&i| active[i]).collect();
        let off: Vec<usize> = (0..nc).filter(|&i| !active[i]).collect();
        let swing = spec.schedule.in_swing(k);
        let last = k + 1 == n_knots;

        b.push(BlockTerm::Reference, k, 1, &[Field::Q], 3 * spec.reference.keypoints.len(), None, vec![]);
        if full {
            b.push(BlockTerm::Regularization { swing }, k, 1, &[Field::V, Field::H, Field::F], nv + 3 + 3 * nc, None, vec![]);
            if swing {
                b.push(BlockTerm::Impact, k, 1, &[Field::Q, Field::V], 3, None, vec![]);
            }
        } else {
            b.push(BlockTerm::Regularization { swing }, k, 1, &[Field::V], nv, None, vec![]);
        }

        let limits: Vec<(f64, f64)> = model.joints[1..]
            .iter()
            .map(|j| (j.q_min, j.q_max))
            .chain(model.joints[1..].iter().map(|j| (j.v_min, j.v_max)))
            .collect();
        let limit_scale = ones(2 * n);
        b.push(BlockTerm::JointLimits, k, 1, &[Field::Q, Field::V], 2 * n, Some(limits), limit_scale);
        let pairs = model.collision_pairs.len();
        b.push(BlockTerm::Collision, k, 1, &[Field::Q], pairs, Some(vec![(0.0, f64::INFINITY); pairs]), ones(pairs));

        let point_field: &[Field] = if full { &[Field::C] } else { &[Field::Q] };
        b.push(
            BlockTerm::ContactHeight { points: on.clone(), kinematic },
            k,
            1,
            point_field,
            on.len(),
            None,
            ones(on.len()),
        );
        b.push(
            BlockTerm::Clearance { points: off.clone(), kinematic },
            k,
            1,
            point_field,
            off.len(),
            Some(vec![(0.0, f64::INFINITY); off.len()]),
            ones(off.len()),
        );
        if !last {
            let next = &spec.schedule.active[k + 1];
            let both: Vec<usize> = (0..nc).filter(|&i| active[i] && next[i]).collect();
            let d = 3 * both.len();
            b.push(BlockTerm::NoSlip { points: both, kinematic }, k, 2, point_field, d, None, ones(d));
            b.push(BlockTerm::PoseIntegration, k, 2, &[Field::Q, Field::V], nv, None, vec![1.0 / dt; nv]);
        }

        if full {
            let dyn_scale = vec![force_scale; 3].into_iter().chain(vec![moment_scale; 3]).collect();
            b.push(BlockTerm::Dynamics, k, 1, &[Field::R, Field::Rdd, Field::Hd, Field::C, Field::F], 6, None, dyn_scale);
            if !last {
                let s = vec![1.0 / dt; 3].into_iter().chain(vec![1.0; 3]).chain(vec![momentum_scale / dt; 3]).collect();
                b.push(
                    BlockTerm::CentroidalIntegration,
                    k,
                    2,
                    &[Field::R, Field::Rd, Field::Rdd, Field::H, Field::Hd],
                    9,
                    None,
                    s,
                );
            }
            let s = vec![momentum_scale; 3].into_iter().chain(ones(3 + 3 * nc)).collect();
            b.push(BlockTerm::Consistency, k, 1, &[Field::Q, Field::V, Field::R, Field::H, Field::C], 6 + 3 * nc, None, s);
            b.push(BlockTerm::ZeroForce { points: off.clone() }, k, 1, &[Field::F], 3 * off.len(), None, vec![force_scale; 3 * off.len()]);
            b.push(
                BlockTerm::FrictionCone { points: on.clone() },
                k,
                1,
                &[Field::F],
                5 * on.len(),
                Some(vec![(f64::NEG_INFINITY, 0.0); 5 * on.len()]),
                vec![force_scale; 5 * on.len()],
            );
            if spec.schedule.in_lock(k) {
                let d = spec.ankle_joints.len();
                b.push(BlockTerm::AnkleLock, k, 1, &[Field::V], d, None, ones(d));
            }
            if spec.rest_boundaries && (k == 0 || last) {
                let (fields, d): (&[Field], usize) = if last {
                    (&[Field::Rd, Field::H, Field::Rdd, Field::Hd], 12)
                } else {
                    (&[Field::Rd, Field::H], 6)
                };
                let s = [1.0, momentum_scale, 0.1, 0.1 * momentum_scale]
                    .iter()
                    .flat_map(|&x| [x; 3])
                    .take(d)
                    .collect();
                b.push(BlockTerm::RestBoundary { last }, k, 1, fields, d, None, s);
            }
            if k == 0 {
                b.push(BlockTerm::ApproachAngle, 0, 1, &[Field::Q], 1, Some(vec![(spec.theta_min, spec.theta_max)]), vec![1.0]);
            }
            b.push(
                BlockTerm::TorqueProxy,
                k,
                1,
                &[Field::Q, Field::F],
                n,
                Some(spec.torque_bounds.clone()),
                vec![moment_scale; n],
            );
        }
    }

    let blocks = b.blocks;
    Ok(NlpProblem {
        spec,
        stage,
        layout,
        blocks,
        initial,
    })
}
