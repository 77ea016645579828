use std::sync::Arc;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::{solve, SolveReport, SolverOptions};
use crate::error::{Error, Result};
use crate::kinodyn::inverse_dynamics;
use crate::model::RobotModel;
use crate::transcription::{build_problem, centroidal_seed, KinodynamicTrajectory, ProblemSpec, Stage};

/// Stage 1 (kinematics only, seeded by the per-frame keypoint fit) then
/// stage 2 (full) warm-started from it.
pub fn two_stage_retarget(
    spec: Arc<ProblemSpec>,
    options: &SolverOptions,
) -> Result<(KinodynamicTrajectory, SolveReport, SolveReport)> {
    let kinematic = build_problem(spec.clone(), Stage::KinematicsOnly, None)?;
    let (stage1, report1) = solve(&kinematic, &kinematic.initial, options)?;
    let warm = centroidal_seed(&spec, &stage1);
    let (traj, report2) = solve_full(spec, &warm, options)?;
    Ok((traj, report1, report2))
}

/// Solve the full stage from `warm`.
pub fn solve_full(
    spec: Arc<ProblemSpec>,
    warm: &KinodynamicTrajectory,
    options: &SolverOptions,
) -> Result<(KinodynamicTrajectory, SolveReport)> {
    let full = build_problem(spec, Stage::Full, Some(warm.clone()))?;
    solve(&full, &full.initial, options)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorqueViolation {
    pub knot: usize,
    /// Joint index in the model (1-based; 0 is the floating base).
    pub joint: usize,
    pub name: String,
    pub torque: f64,
    /// The limit that was crossed (`tau_max` or `tau_min`).
    pub limit: f64,
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorqueReport {
    /// `torques[k][j - 1]` for actuated joint `j`.
    pub torques: Vec<Vec<f64>>,
    pub accelerations: Vec<Vec<f64>>,
    /// Per joint `max_k |τ|`.
    pub peak: Vec<f64>,
    pub violations: Vec<TorqueViolation>,
    pub base_wrench: Vec<[f64; 6]>,
}

impl TorqueReport {
    pub fn feasible(&self) -> bool {
        self.violations.is_empty()
    }

    /// Largest and smallest torque of each joint over the trajectory.
    pub fn extremes(&self) -> Vec<(f64, f64)> {
        let n = self.peak.len();
        (0..n)
            .map(|j| {
                self.torques.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
                    (lo.min(t[j]), hi.max(t[j]))
                })
            })
            .collect()
    }
}

/// Time derivative of `v` by central differences, second-order one-sided
/// at both ends.
pub fn finite_difference_accelerations(traj: &KinodynamicTrajectory) -> Result<Vec<DVector<f64>>> {
    let n = traj.n_knots();
    if n < 3 {
        return Err(Error::InvalidArgument("need at least three knots to difference".into()));
    }
    let v = |k: usize| &traj.knots[k].v;
    let h2 = 2.0 * traj.dt;
    Ok((0..n)
        .map(|k| match k {
            0 => (v(0) * -3.0 + v(1) * 4.0 - v(2)) / h2,
            k if k == n - 1 => (v(k) * 3.0 - v(k - 1) * 4.0 + v(k - 2)) / h2,
            k => (v(k + 1) - v(k - 1)) / h2,
        })
        .collect())
}

/// Inverse dynamics along the trajectory with its contact forces, checked
/// against the model's torque limits.
pub fn verify_torques(model: &RobotModel, traj: &KinodynamicTrajectory, gravity: &Vector3<f64>) -> Result<TorqueReport> {
    traj.validate(model)?;
    let acc = finite_difference_accelerations(traj)?;
    let n = model.n_joints();
    let mut torques = Vec::with_capacity(traj.n_knots());
    let mut base_wrench = Vec::with_capacity(traj.n_knots());
    let mut violations = Vec::new();
    let mut peak = vec![0.0_f64; n];
    for (k, knot) in traj.knots.iter().enumerate() {
        let id = inverse_dynamics(model, knot.q.as_slice(), knot.v.as_slice(), acc[k].as_slice(), &knot.f, gravity);
        for j in 1..=n {
            let t = id.torques[j - 1];
            let joint = &model.joints[j];
            peak[j - 1] = peak[j - 1].max(t.abs());
            let crossed = if t > joint.tau_max {
                Some(joint.tau_max)
            } else if t < joint.tau_min {
                Some(joint.tau_min)
            } else {
                None
            };
            if let Some(limit) = crossed {
                violations.push(TorqueViolation {
                    knot: k,
                    joint: j,
                    name: joint.name.clone(),
                    torque: t,
                    limit,
                    excess: (t - limit).abs(),
                });
            }
        }
        torques.push(id.torques.as_slice().to_vec());
        let w = id.base_wrench;
        base_wrench.push([w[0], w[1], w[2], w[3], w[4], w[5]]);
    }
    Ok(TorqueReport {
        torques,
        accelerations: acc.iter().map(|a| a.as_slice().to_vec()).collect(),
        peak,
        violations,
        base_wrench,
    })
}

/// Tightened proxy bounds after a round: for each violated side of a joint,
/// `bound * (limit / peak) * backoff`.
pub fn tighten_bounds(
    model: &RobotModel,
    bounds: &[(f64, f64)],
    report: &TorqueReport,
    backoff: f64,
) -> Vec<(f64, f64)> {
    let extremes = report.extremes();
    bounds
        .iter()
        .enumerate()
        .map(|(i, &(lo, hi))| {
            let joint = &model.joints[i + 1];
            let (tmin, tmax) = extremes[i];
            let hi = if tmax > joint.tau_max { hi * (joint.tau_max / tmax) * backoff } else { hi };
            let lo = if tmin < joint.tau_min { lo * (joint.tau_min / tmin) * backoff } else { lo };
            (lo, hi)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct FeasibilityOutcome {
    pub trajectory: KinodynamicTrajectory,
    pub kinematic_report: SolveReport,
    /// Full-stage report of the last round.
    pub report: SolveReport,
    pub torques: TorqueReport,
    pub rounds: usize,
    pub feasible: bool,
    /// Proxy bounds used in the last round.
    pub torque_bounds: Vec<(f64, f64)>,
}

/// Alternate optimization and inverse-dynamics verification, tightening
/// the torque-proxy bounds of violated joints, for at most
/// `options.max_rounds` rounds.
pub fn retarget_until_feasible(spec: Arc<ProblemSpec>, options: &SolverOptions) -> Result<FeasibilityOutcome> {
    options.validate()?;
    let model = spec.model.clone();
    let (mut traj, kinematic_report, mut report) = two_stage_retarget(spec.clone(), options)?;
    let mut spec = spec;
    let mut rounds = 1;
    loop {
        let torques = verify_torques(&model, &traj, &crate::kinodyn::GRAVITY)?;
        if torques.feasible() || rounds >= options.max_rounds {
            let feasible = torques.feasible();
            return Ok(FeasibilityOutcome {
                trajectory: traj,
                kinematic_report,
                report,
                torques,
                rounds,
                feasible,
                torque_bounds: spec.torque_bounds.clone(),
            });
        }
        let mut next = (*spec).clone();
        next.torque_bounds = tighten_bounds(&model, &spec.torque_bounds, &torques, options.backoff);
        spec = Arc::new(next);
        let (t, r) = solve_full(spec.clone(), &traj, options)?;
        traj = t;
        report = r;
        rounds += 1;
    }
}
