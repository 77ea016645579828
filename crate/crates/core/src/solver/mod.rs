//! Augmented-Lagrangian solver for banded least-squares NLPs, the two-stage
//! retargeting pipeline and the inverse-dynamics torque check.
//!
//! The inner problem is minimized with Levenberg-Marquardt on the
//! Gauss-Newton model of the augmented Lagrangian; the banded structure of
//! the knot-major variable ordering keeps each step a banded Cholesky
//! solve. Inequalities use the Powell-Hestenes-Rockafellar form, which is
//! the slack formulation with the slacks eliminated in closed form.

mod banded;
mod pipeline;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use banded::{BandedCholesky, BandedMatrix};
pub use pipeline::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    /// Adds `‖values‖²` to the objective.
    Cost,
    /// Adds `−‖values‖²`; only its gradient enters the step model.
    Concave,
    /// `values = 0`.
    Equality,
    /// `lower <= values <= upper`.
    Inequality,
}

/// One evaluated block of residual rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TermEval {
    pub family: &'static str,
    pub kind: TermKind,
    pub values: DVector<f64>,
    /// Bounds, inequality terms only.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Row scaling used inside the penalty (empty means 1); reported
    /// residuals are unscaled.
    pub scale: Vec<f64>,
    /// Tangent-space column of each Jacobian column.
    pub cols: Vec<usize>,
    pub jacobian: Option<DMatrix<f64>>,
}

impl TermEval {
    fn row_scale(&self, i: usize) -> f64 {
        if self.scale.is_empty() {
            1.0
        } else {
            self.scale[i]
        }
    }

    /// Raw violation of row `i` (absolute residual for equalities).
    pub fn violation(&self, i: usize) -> f64 {
        match self.kind {
            TermKind::Equality => self.values[i].abs(),
            TermKind::Inequality => (self.lower[i] - self.values[i])
                .max(self.values[i] - self.upper[i])
                .max(0.0),
            _ => 0.0,
        }
    }

    /// Objective contribution of cost terms.
    pub fn cost(&self) -> f64 {
        match self.kind {
            TermKind::Cost => self.values.norm_squared(),
            TermKind::Concave => -self.values.norm_squared(),
            _ => 0.0,
        }
    }
}

/// A nonlinear program over a manifold point type, evaluated as blocks of
/// residual rows whose Jacobians live in the tangent space.
pub trait Nlp {
    type Point: Clone;

    fn n_tangent(&self) -> usize;

    fn retract(&self, x: &Self::Point, dx: &[f64]) -> Self::Point;

    /// The term list must have the same structure at every point.
    fn evaluate(&self, x: &Self::Point, jacobians: bool) -> Result<Vec<TermEval>>;

    /// Second-order part `Σ y_i ∇²c_i` of term `term` over its columns,
    /// where the problem provides one. Gauss-Newton otherwise.
    fn curvature(&self, _x: &Self::Point, _term: usize, _y: &[f64]) -> Result<Option<DMatrix<f64>>> {
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub eq_tol: f64,
    pub ineq_tol: f64,
    pub stationarity_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    /// Torque-bound tightening factor of the feasibility loop.
    pub backoff: f64,
    pub max_rounds: usize,
    /// Recorded for provenance; the solver itself draws no random numbers.
    pub seed: u64,
    /// Add the problem's constraint curvature to the Gauss-Newton matrix.
    pub second_order: bool,
    /// Print inner iterations to stderr.
    pub trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            eq_tol: 1e-4,
            ineq_tol: 1e-6,
            stationarity_tol: 1e-4,
            max_outer: 40,
            max_inner: 60,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            penalty_max: 1e8,
            backoff: 0.9,
            max_rounds: 4,
            seed: 0,
            second_order: true,
            trace: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.eq_tol, self.ineq_tol, self.stationarity_tol, self.penalty_init, self.penalty_max];
        if positive.iter().any(|x| !(*x > 0.0)) || !(self.penalty_growth > 1.0) {
            return Err(Error::InvalidArgument("tolerances and penalties must be positive, growth > 1".into()));
        }
        if !(self.backoff > 0.0 && self.backoff <= 1.0) {
            return Err(Error::InvalidArgument("backoff must be in (0, 1]".into()));
        }
        if self.max_outer == 0 || self.max_inner == 0 || self.max_rounds == 0 {
            return Err(Error::InvalidArgument("iteration budgets must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    NotConverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySummary {
    pub family: String,
    pub kind: TermKind,
    pub rows: usize,
    /// Largest raw violation.
    pub max: f64,
    /// Sum of raw violations.
    pub sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub iteration: usize,
    pub cost: f64,
    pub max_equality: f64,
    pub max_inequality: f64,
    pub stationarity: f64,
    pub penalty: f64,
    pub inner_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    pub inner_iterations: usize,
    pub final_cost: f64,
    pub max_equality: f64,
    pub max_inequality: f64,
    pub stationarity: f64,
    pub families: Vec<FamilySummary>,
    /// Objective contribution per cost family.
    pub costs: Vec<(String, f64)>,
    pub history: Vec<OuterRecord>,
    /// Not serialized, so that reports of identical runs compare equal.
    #[serde(skip)]
    pub wall_time: f64,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn family(&self, name: &str) -> Option<&FamilySummary> {
        self.families.iter().find(|f| f.family == name)
    }
}

/// Residual statistics of one evaluation: (cost, max equality, max
/// inequality, per family summaries, per cost family values).
pub fn summarize(terms: &[TermEval]) -> (f64, f64, f64, Vec<FamilySummary>, Vec<(String, f64)>) {
    let mut families: Vec<FamilySummary> = Vec::new();
    let mut costs: Vec<(String, f64)> = Vec::new();
    let (mut cost, mut eq, mut ineq) = (0.0, 0.0_f64, 0.0_f64);
    for t in terms {
        match t.kind {
            TermKind::Cost | TermKind::Concave => {
                let c = t.cost();
                cost += c;
                match costs.iter_mut().find(|e| e.0 == t.family) {
                    Some(e) => e.1 += c,
                    None => costs.push((t.family.to_string(), c)),
                }
            }
            TermKind::Equality | TermKind::Inequality => {
                let idx = match families.iter().position(|f| f.family == t.family && f.kind == t.kind) {
                    Some(i) => i,
                    None => {
                        families.push(FamilySummary {
                            family: t.family.to_string(),
                            kind: t.kind,
                            rows: 0,
                            max: 0.0,
                            sum: 0.0,
                        });
                        families.len() - 1
                    }
                };
                let fam = &mut families[idx];
                for i in 0..t.values.len() {
                    let v = t.violation(i);
                    fam.rows += 1;
                    fam.max = fam.max.max(v);
                    fam.sum += v;
                    if t.kind == TermKind::Equality {
                        eq = eq.max(v);
                    } else {
                        ineq = ineq.max(v);
                    }
                }
            }
        }
    }
    (cost, eq, ineq, families, costs)
}

/// Multipliers of equality rows and of the lower/upper sides of
/// inequality rows, with a penalty per row. Rows in different units need
/// very different penalties, so each row grows its own.
struct Multipliers {
    eq: Vec<Vec<f64>>,
    lo: Vec<Vec<f64>>,
    hi: Vec<Vec<f64>>,
    rho: Vec<Vec<f64>>,
    /// Raw violation at the previous outer iteration.
    last: Vec<Vec<f64>>,
}

impl Multipliers {
    fn new(terms: &[TermEval], rho: f64) -> Self {
        let fill = |v: f64| -> Vec<Vec<f64>> { terms.iter().map(|t| vec![v; t.values.len()]).collect() };
        Multipliers {
            eq: fill(0.0),
            lo: fill(0.0),
            hi: fill(0.0),
            rho: fill(rho),
            last: fill(f64::INFINITY),
        }
    }

    fn max_penalty(&self, terms: &[TermEval]) -> f64 {
        terms
            .iter()
            .enumerate()
            .filter(|(_, t)| matches!(t.kind, TermKind::Equality | TermKind::Inequality))
            .flat_map(|(ti, _)| self.rho[ti].iter().copied())
            .fold(0.0, f64::max)
    }
}

/// PHR term for a constraint `s <= 0` with multiplier `mu`:
/// value, first derivative in `s`, and whether it is active.
fn phr(s: f64, mu: f64, rho: f64) -> (f64, f64, bool) {
    let t = mu + rho * s;
    if t > 0.0 {
        ((t * t - mu * mu) / (2.0 * rho), t, true)
    } else {
        (-mu * mu / (2.0 * rho), 0.0, false)
    }
}

/// Augmented Lagrangian value of an evaluation.
fn merit(terms: &[TermEval], lam: &Multipliers) -> f64 {
    let mut total = 0.0;
    for (ti, t) in terms.iter().enumerate() {
        match t.kind {
            TermKind::Cost | TermKind::Concave => total += t.cost(),
            TermKind::Equality => {
                for i in 0..t.values.len() {
                    let rho = lam.rho[ti][i];
                    let s = t.row_scale(i) * t.values[i];
                    total += lam.eq[ti][i] * s + 0.5 * rho * s * s;
                }
            }
            TermKind::Inequality => {
                for i in 0..t.values.len() {
                    let (w, rho) = (t.row_scale(i), lam.rho[ti][i]);
                    if t.lower[i].is_finite() {
                        total += phr(w * (t.lower[i] - t.values[i]), lam.lo[ti][i], rho).0;
                    }
                    if t.upper[i].is_finite() {
                        total += phr(w * (t.values[i] - t.upper[i]), lam.hi[ti][i], rho).0;
                    }
                }
            }
        }
    }
    total
}

/// Per-row gradient weight `y` and curvature weight `c` of a term: its
/// contribution is `J^T y` to the gradient and `J^T diag(c) J` to the
/// Gauss-Newton matrix.
fn row_weights(t: &TermEval, ti: usize, lam: &Multipliers) -> (Vec<f64>, Vec<f64>) {
    let rows = t.values.len();
    let mut y = vec![0.0; rows];
    let mut c = vec![0.0; rows];
    for i in 0..rows {
        let (w, rho) = (t.row_scale(i), lam.rho[ti][i]);
        match t.kind {
            TermKind::Cost => {
                y[i] = 2.0 * t.values[i];
                c[i] = 2.0;
            }
            TermKind::Concave => y[i] = -2.0 * t.values[i],
            TermKind::Equality => {
                y[i] = w * (lam.eq[ti][i] + rho * w * t.values[i]);
                c[i] = rho * w * w;
            }
            TermKind::Inequality => {
                if t.lower[i].is_finite() {
                    let (_, d, active) = phr(w * (t.lower[i] - t.values[i]), lam.lo[ti][i], rho);
                    y[i] -= w * d;
                    if active {
                        c[i] += rho * w * w;
                    }
                }
                if t.upper[i].is_finite() {
                    let (_, d, active) = phr(w * (t.values[i] - t.upper[i]), lam.hi[ti][i], rho);
                    y[i] += w * d;
                    if active {
                        c[i] += rho * w * w;
                    }
                }
            }
        }
    }
    (y, c)
}

/// Gradient and Gauss-Newton Hessian of the augmented Lagrangian.
fn model(
    terms: &[TermEval],
    lam: &Multipliers,
    n: usize,
    band: usize,
    curvature: &mut dyn FnMut(usize, &[f64]) -> Result<Option<DMatrix<f64>>>,
) -> Result<(Vec<f64>, BandedMatrix)> {
    let mut g = vec![0.0; n];
    let mut h = BandedMatrix::zeros(n, band);
    for (ti, t) in terms.iter().enumerate() {
        let jac = t.jacobian.as_ref().expect("jacobians requested");
        let rows = t.values.len();
        let (y, c) = row_weights(t, ti, lam);
        for (a, &col) in t.cols.iter().enumerate() {
            let ja = jac.column(a);
            g[col] += (0..rows).map(|i| ja[i] * y[i]).sum::<f64>();
        }
        let second = if t.kind == TermKind::Concave { None } else { curvature(ti, &y)? };
        if c.iter().all(|x| *x == 0.0) && second.is_none() {
            continue;
        }
        let weighted = DMatrix::from_fn(rows, t.cols.len(), |i, a| jac[(i, a)] * c[i]);
        let mut block = jac.transpose() * weighted;
        if let Some(s) = second {
            block += s;
        }
        for (a, &ca) in t.cols.iter().enumerate() {
            for (b, &cb) in t.cols.iter().enumerate().take(a + 1) {
                let v = block[(a, b)];
                if v == 0.0 {
                    continue;
                }
                if ca == cb {
                    h.add(ca, ca, if a == b { v } else { 2.0 * v });
                } else {
                    h.add(ca, cb, v);
                }
            }
        }
    }
    Ok((g, h))
}

fn check_finite(terms: &[TermEval]) -> Result<()> {
    for t in terms {
        if t.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("residual family `{}`", t.family)));
        }
        if let Some(j) = &t.jacobian {
            if j.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("jacobian of family `{}`", t.family)));
            }
        }
    }
    Ok(())
}

/// Half-bandwidth of the Gauss-Newton matrix implied by the term columns.
pub fn bandwidth(terms: &[TermEval]) -> usize {
    terms
        .iter()
        .filter(|t| !t.cols.is_empty())
        .map(|t| t.cols.iter().max().unwrap() - t.cols.iter().min().unwrap())
        .max()
        .unwrap_or(0)
}

/// Divisor of the stationarity measure: large multipliers make an absolute
/// gradient tolerance unreachable in floating point.
fn multiplier_scale(lam: &Multipliers) -> f64 {
    let largest = [&lam.eq, &lam.lo, &lam.hi]
        .iter()
        .flat_map(|m| m.iter().flatten())
        .fold(0.0_f64, |a, b| a.max(b.abs()));
    (largest / MULTIPLIER_SCALE_FLOOR).max(1.0)
}

const MULTIPLIER_SCALE_FLOOR: f64 = 100.0;

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Minimize the problem from `x0`.
pub fn solve<P: Nlp>(problem: &P, x0: &P::Point, options: &SolverOptions) -> Result<(P::Point, SolveReport)> {
    options.validate()?;
    let start = Instant::now();
    let n = problem.n_tangent();
    let mut x = x0.clone();
    let mut terms = problem.evaluate(&x, true)?;
    check_finite(&terms)?;
    let band = bandwidth(&terms).min(n.saturating_sub(1));
    let mut lam = Multipliers::new(&terms, options.penalty_init);
    let mut history = Vec::new();
    let mut inner_total = 0;
    let mut damping = 1e-3;
    let mut stalled = 0;
    let mut status = SolveStatus::NotConverged;
    let mut stationarity = f64::INFINITY;

    for outer in 1..=options.max_outer {
        let mut inner = 0;
        let mut f = merit(&terms, &lam);
        // Loose inner solves while the multipliers are still far off.
        let inner_tol = options.stationarity_tol.max(0.1_f64.powi(outer as i32));
        let lam_scale = multiplier_scale(&lam);
        loop {
            let (g, h) = {
                let mut curvature = |ti: usize, y: &[f64]| {
                    if options.second_order {
                        problem.curvature(&x, ti, y)
                    } else {
                        Ok(None)
                    }
                };
                model(&terms, &lam, n, band, &mut curvature)?
            };
            stationarity = inf_norm(&g) / lam_scale;
            if options.trace {
                let arg = (0..n).fold(0, |b, i| if g[i].abs() > g[b].abs() { i } else { b });
                eprintln!("outer {outer} inner {inner} merit {f:.10e} grad {stationarity:.3e} at {arg} damping {damping:.1e} rho {:.0e}", lam.max_penalty(&terms));
            }
            if stationarity <= inner_tol || inner >= options.max_inner {
                break;
            }
            inner += 1;
            let diag = h.diagonal();
            let mut accepted = false;
            // Retry with growing damping until the step reduces the merit.
            for _ in 0..30 {
                let mut damped = h.clone();
                let d: Vec<f64> = diag.iter().map(|v| damping * v.max(1e-6) + 1e-12).collect();
                damped.add_diagonal(&d);
                let Some(chol) = damped.cholesky() else {
                    damping *= 10.0;
                    continue;
                };
                let step: Vec<f64> = chol.solve(&g).iter().map(|v| -v).collect();
                let hs = h.mul_vec(&step);
                let predicted = -(g.iter().zip(&step).map(|(a, b)| a * b).sum::<f64>()
                    + 0.5 * hs.iter().zip(&step).map(|(a, b)| a * b).sum::<f64>());
                let trial = problem.retract(&x, &step);
                let trial_terms = problem.evaluate(&trial, false)?;
                let finite = trial_terms.iter().all(|t| t.values.iter().all(|v| v.is_finite()));
                let f_trial = if finite { merit(&trial_terms, &lam) } else { f64::INFINITY };
                let actual = f - f_trial;
                if predicted > 0.0 && actual > 1e-4 * predicted {
                    let ratio = actual / predicted;
                    damping *= (1.0 / 3.0_f64).max(1.0 - (2.0 * ratio - 1.0).powi(3));
                    damping = damping.max(1e-12);
                    x = trial;
                    f = f_trial;
                    accepted = true;
                    break;
                }
                if predicted <= f64::EPSILON * f.abs().max(1.0) {
                    // Already at the model minimum to rounding.
                    break;
                }
                damping *= 4.0;
            }
            if !accepted {
                break;
            }
            terms = problem.evaluate(&x, true)?;
        }
        inner_total += inner;
        let (cost, max_eq, max_in, _, _) = summarize(&terms);
        history.push(OuterRecord {
            iteration: outer,
            cost,
            max_equality: max_eq,
            max_inequality: max_in,
            stationarity,
            penalty: lam.max_penalty(&terms),
            inner_iterations: inner,
        });
        if options.trace {
            let (_, _, _, fams, _) = summarize(&terms);
            for f in fams.iter().filter(|f| f.max > 0.0) {
                eprintln!("  family {} max {:.2e}", f.family, f.max);
            }
        }
        if max_eq <= options.eq_tol && max_in <= options.ineq_tol && stationarity <= options.stationarity_tol {
            status = SolveStatus::Converged;
            break;
        }

        // First-order multiplier update. A row's penalty grows when it is
        // out of tolerance and did not shrink to a quarter of its previous
        // violation.
        let mut grew = false;
        let mut capped = false;
        for (ti, t) in terms.iter().enumerate() {
            let tol = match t.kind {
                TermKind::Equality => options.eq_tol,
                TermKind::Inequality => options.ineq_tol,
                _ => continue,
            };
            for i in 0..t.values.len() {
                let (w, rho) = (t.row_scale(i), lam.rho[ti][i]);
                if t.kind == TermKind::Equality {
                    lam.eq[ti][i] += rho * w * t.values[i];
                } else {
                    if t.lower[i].is_finite() {
                        let s = w * (t.lower[i] - t.values[i]);
                        lam.lo[ti][i] = (lam.lo[ti][i] + rho * s).max(0.0);
                    }
                    if t.upper[i].is_finite() {
                        let s = w * (t.values[i] - t.upper[i]);
                        lam.hi[ti][i] = (lam.hi[ti][i] + rho * s).max(0.0);
                    }
                }
                let v = t.violation(i);
                if v > tol && v > 0.25 * lam.last[ti][i] {
                    if rho < options.penalty_max {
                        lam.rho[ti][i] = (rho * options.penalty_growth).min(options.penalty_max);
                        grew = true;
                    } else {
                        capped = true;
                    }
                }
                lam.last[ti][i] = v;
            }
        }
        if capped && !grew {
            stalled += 1;
        } else {
            stalled = 0;
        }
        if stalled >= 3 {
            break;
        }
    }

    let (final_cost, max_equality, max_inequality, families, costs) = summarize(&terms);
    let report = SolveReport {
        status,
        iterations: history.len(),
        inner_iterations: inner_total,
        final_cost,
        max_equality,
        max_inequality,
        stationarity,
        families,
        costs,
        history,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((x, report))
}
