//! Weighted least-squares identification with physical-consistency
//! constraints, base-parameter OLS, cable fitting and validation metrics.

pub mod barrier;

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RobotModel;
use crate::regressor::{
    cable_torque, stack_regressor, BarycentricInertia, BaseReduction, MotorState, ParamKind, ParameterRecord,
    ParameterVector, StandardInertia,
};
use crate::signals::ProcessedLog;

use barrier::{BarrierOptions, BarrierProblem, LinearConstraint, Lmi};

/// Strictness margin on the pseudo-inertia matrices.
pub const LMI_EPSILON: f64 = 1e-9;
/// Masses below this are too small to recover a centre of mass.
pub const MASS_FLOOR: f64 = 1e-6;

/// Stacked, weighted regression data.
#[derive(Clone, Debug)]
pub struct IdentificationProblem {
    /// Sample-major stacked regressor (`samples × motors` rows).
    pub w: DMatrix<f64>,
    /// Measured motor torques with the cable torque removed.
    pub omega: DVector<f64>,
    /// `1 / (max τ_i − min τ_i)` per motor.
    pub weights: DVector<f64>,
    /// Optional `(lower, upper)` per standard parameter.
    pub bounds: Vec<Option<(f64, f64)>>,
}

impl IdentificationProblem {
    pub fn new(w: DMatrix<f64>, omega: DVector<f64>, weights: DVector<f64>) -> Result<Self> {
        let n_m = weights.len();
        if n_m == 0 || w.nrows() % n_m != 0 {
            return Err(Error::Dimension {
                what: "regressor rows",
                expected: n_m,
                got: w.nrows(),
            });
        }
        if omega.len() != w.nrows() {
            return Err(Error::Dimension {
                what: "torque vector",
                expected: w.nrows(),
                got: omega.len(),
            });
        }
        if !weights.iter().all(|w| *w > 0.0 && w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be positive and finite".into()));
        }
        let n_p = w.ncols();
        Ok(IdentificationProblem {
            w,
            omega,
            weights,
            bounds: vec![None; n_p],
        })
    }

    pub fn motor_count(&self) -> usize {
        self.weights.len()
    }

    pub fn sample_count(&self) -> usize {
        self.w.nrows() / self.motor_count()
    }

    pub fn with_bound(mut self, parameter: usize, lower: f64, upper: f64) -> Result<Self> {
        if parameter >= self.bounds.len() || !(lower <= upper) {
            return Err(Error::InvalidArgument(format!("bad bound on parameter {parameter}")));
        }
        self.bounds[parameter] = Some((lower, upper));
        Ok(self)
    }

    /// Rows scaled by their motor weight.
    pub fn weighted(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n_m = self.motor_count();
        let mut a = self.w.clone();
        let mut y = self.omega.clone();
        for r in 0..a.nrows() {
            let w = self.weights[r % n_m];
            a.row_mut(r).scale_mut(w);
            y[r] *= w;
        }
        (a, y)
    }

    /// `Σ_rows (w_i (W_r δ − ω_r))²`.
    pub fn residual(&self, delta: &DVector<f64>) -> f64 {
        let n_m = self.motor_count();
        let e = &self.w * delta - &self.omega;
        e.iter().enumerate().map(|(r, v)| (self.weights[r % n_m] * v).powi(2)).sum()
    }
}

/// Regressor and cable-free torque of one processed log, with the regressor
/// passed through the same filter as the measurements.
pub fn log_regression(model: &RobotModel, log: &ProcessedLog) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n_m = model.motor_count();
    if log.log.motor_count() != n_m {
        return Err(Error::Dimension {
            what: "log motor count",
            expected: n_m,
            got: log.log.motor_count(),
        });
    }
    let n_p = model.parameter_count();
    let (q, dq, ddq) = log.full_states();
    let total = q.nrows();
    let states: Vec<MotorState> = (0..total)
        .map(|i| MotorState {
            q: q.row(i).transpose(),
            dq: dq.row(i).transpose(),
            ddq: ddq.row(i).transpose(),
        })
        .collect();
    let w_full = stack_regressor(model, &states)?;

    // time-major copy of the non-zero regressor entries
    let active: Vec<(usize, usize)> = (0..n_m)
        .flat_map(|m| (0..n_p).map(move |p| (m, p)))
        .filter(|&(m, p)| (0..total).any(|s| w_full[(s * n_m + m, p)] != 0.0))
        .collect();
    let series = DMatrix::from_fn(total, active.len(), |s, c| {
        let (m, p) = active[c];
        w_full[(s * n_m + m, p)]
    });
    let filtered = log.filter_like(&series)?;
    let n = log.len();
    let mut w = DMatrix::zeros(n * n_m, n_p);
    for (c, &(m, p)) in active.iter().enumerate() {
        for s in 0..n {
            w[(s * n_m + m, p)] = filtered[(s, c)];
        }
    }

    let cable_rows: Vec<DVector<f64>> = states.par_iter().map(|s| cable_torque(model, &s.q)).collect();
    let cable = log.filter_like(&DMatrix::from_fn(total, n_m, |s, m| cable_rows[s][m]))?;
    let omega = DVector::from_fn(n * n_m, |r, _| log.log.tau[(r / n_m, r % n_m)] - cable[(r / n_m, r % n_m)]);
    Ok((w, omega))
}

/// Stacks every log and weights each motor by its observed torque range.
pub fn stack_problem(model: &RobotModel, logs: &[ProcessedLog]) -> Result<IdentificationProblem> {
    if logs.is_empty() {
        return Err(Error::InvalidArgument("no logs to identify from".into()));
    }
    let n_m = model.motor_count();
    let parts: Vec<(DMatrix<f64>, DVector<f64>)> = logs.iter().map(|l| log_regression(model, l)).collect::<Result<_>>()?;
    let rows: usize = parts.iter().map(|p| p.0.nrows()).sum();
    let mut w = DMatrix::zeros(rows, model.parameter_count());
    let mut omega = DVector::zeros(rows);
    let mut at = 0;
    for (pw, po) in &parts {
        w.rows_mut(at, pw.nrows()).copy_from(pw);
        omega.rows_mut(at, po.len()).copy_from(po);
        at += pw.nrows();
    }
    let mut weights = DVector::zeros(n_m);
    for k in 0..n_m {
        let (lo, hi) = logs
            .iter()
            .flat_map(|l| l.log.tau.column(k).iter().copied().collect::<Vec<_>>())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        if !(range > 0.0) || !range.is_finite() {
            return Err(Error::ZeroRange(model.motor_names()[k].clone()));
        }
        weights[k] = 1.0 / range;
    }
    IdentificationProblem::new(w, omega, weights)
}

/// Unconstrained weighted least squares on the base parameters.
#[derive(Clone, Debug)]
pub struct BaseEstimate {
    pub delta_b: DVector<f64>,
    pub residual: f64,
}

fn least_squares(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() < a.ncols() || a.ncols() == 0 {
        return Err(Error::RankDeficient {
            rank: a.nrows().min(a.ncols()),
            cols: a.ncols(),
        });
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = 1e-10 * smax;
    let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
    if rank < a.ncols() {
        return Err(Error::RankDeficient { rank, cols: a.ncols() });
    }
    svd.solve(y, tol).map_err(|e| Error::NoConvergence(e.to_string()))
}

pub fn solve_ols_base(problem: &IdentificationProblem, reduction: &BaseReduction) -> Result<BaseEstimate> {
    if problem.w.nrows() == 0 {
        return Err(Error::InvalidArgument("problem has no rows".into()));
    }
    if reduction.parameter_count != problem.w.ncols() {
        return Err(Error::Dimension {
            what: "base reduction parameter count",
            expected: problem.w.ncols(),
            got: reduction.parameter_count,
        });
    }
    let (a, y) = problem.weighted();
    let a_b = reduction.select(&a);
    let delta_b = least_squares(&a_b, &y)?;
    let residual = (&a_b * &delta_b - &y).norm_squared();
    Ok(BaseEstimate { delta_b, residual })
}

/// Worst value of one feasibility condition (negative means violated).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub name: String,
    pub value: f64,
}

/// Standard parameters of one link, `None` when the mass is below the floor.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkEstimate {
    pub joint: String,
    pub standard: Option<StandardInertia>,
}

#[derive(Clone, Debug)]
pub struct IdentifiedParameters {
    pub delta: ParameterVector,
    pub standard: Vec<LinkEstimate>,
    /// Weighted squared residual.
    pub residual: f64,
    pub feasibility_margins: Vec<Margin>,
    pub duality_gap: f64,
    pub newton_iterations: usize,
}

impl IdentifiedParameters {
    pub fn min_margin(&self) -> f64 {
        self.feasibility_margins.iter().map(|m| m.value).fold(f64::INFINITY, f64::min)
    }
}

/// `(m_k, r_k, I_k)` for every link via `r = l/m`, `I = L − m S(r)ᵀS(r)`.
pub fn recover_standard(model: &RobotModel, delta: &ParameterVector) -> Vec<LinkEstimate> {
    delta
        .layout()
        .links()
        .map(|k| LinkEstimate {
            joint: model.joints()[k].name.clone(),
            standard: delta.inertial(k).and_then(|b| b.to_standard(MASS_FLOOR)),
        })
        .collect()
}

/// Every feasibility condition evaluated at `delta`.
pub fn feasibility_margins(model: &RobotModel, delta: &ParameterVector) -> Vec<Margin> {
    let layout = delta.layout();
    let mut out = Vec::new();
    for (j, joint) in model.joints().iter().enumerate() {
        if let Some(b) = delta.inertial(j) {
            out.push(Margin {
                name: format!("pseudo-inertia {}", joint.name),
                value: b.pseudo_inertia().symmetric_eigenvalues().min(),
            });
            if let Some(hull) = model.com_hull(j) {
                for (a, axis) in ["x", "y", "z"].iter().enumerate() {
                    out.push(Margin {
                        name: format!("hull {} {axis} lower", joint.name),
                        value: b.first_moment[a] - b.mass * hull.lower[a],
                    });
                    out.push(Margin {
                        name: format!("hull {} {axis} upper", joint.name),
                        value: b.mass * hull.upper[a] - b.first_moment[a],
                    });
                }
            }
        }
        for kind in [ParamKind::Fv, ParamKind::Fc, ParamKind::Im, ParamKind::Ks] {
            if let Some(i) = layout.index_of(j, kind) {
                out.push(Margin {
                    name: layout.label(i),
                    value: delta.values[i],
                });
            }
        }
    }
    out
}

fn constraints(model: &RobotModel, problem: &IdentificationProblem) -> (Vec<LinearConstraint>, Vec<Lmi>) {
    let layout = model.layout();
    let mut linear = Vec::new();
    let mut lmis = Vec::new();
    for (j, _) in model.joints().iter().enumerate() {
        if let Some(start) = layout.link_block(j) {
            let terms = (0..10)
                .map(|i| {
                    let mut unit = [0.0; 10];
                    unit[i] = 1.0;
                    (start + i, BarycentricInertia::from_slice(&unit).pseudo_inertia())
                })
                .collect();
            lmis.push(Lmi {
                constant: Matrix4::identity() * -LMI_EPSILON,
                terms,
            });
            if let Some(hull) = model.com_hull(j) {
                let m = start + 9;
                for a in 0..3 {
                    let l = start + 6 + a;
                    linear.push(LinearConstraint {
                        terms: vec![(l, 1.0), (m, -hull.lower[a])],
                        bound: 0.0,
                    });
                    linear.push(LinearConstraint {
                        terms: vec![(m, hull.upper[a]), (l, -1.0)],
                        bound: 0.0,
                    });
                }
            }
        }
        for kind in [ParamKind::Fv, ParamKind::Fc, ParamKind::Im, ParamKind::Ks] {
            if let Some(i) = layout.index_of(j, kind) {
                linear.push(LinearConstraint {
                    terms: vec![(i, 1.0)],
                    bound: 0.0,
                });
            }
        }
    }
    for (i, b) in problem.bounds.iter().enumerate() {
        if let Some((lo, hi)) = *b {
            if lo.is_finite() {
                linear.push(LinearConstraint { terms: vec![(i, 1.0)], bound: lo });
            }
            if hi.is_finite() {
                linear.push(LinearConstraint { terms: vec![(i, -1.0)], bound: -hi });
            }
        }
    }
    (linear, lmis)
}

/// Interior starting point: unit masses at the hull centres with small
/// isotropic inertia, unit friction, motor inertia and stiffness.
fn starting_point(model: &RobotModel, problem: &IdentificationProblem) -> DVector<f64> {
    let mut delta = ParameterVector::zeros(model.layout().clone());
    for (j, joint) in model.joints().iter().enumerate() {
        if joint.link_inertia {
            let com = model
                .com_hull(j)
                .map(|h| (h.lower + h.upper) * 0.5)
                .unwrap_or_else(nalgebra::Vector3::zeros);
            let b = BarycentricInertia::from_standard(&StandardInertia {
                mass: 1.0,
                com,
                inertia_com: nalgebra::Matrix3::identity() * 1e-2,
            });
            delta.set_inertial(j, &b);
        }
        for kind in [ParamKind::Fv, ParamKind::Fc, ParamKind::Im, ParamKind::Ks] {
            delta.set(j, kind, 1.0);
        }
    }
    let mut x = delta.values;
    for (i, b) in problem.bounds.iter().enumerate() {
        if let Some((lo, hi)) = *b {
            x[i] = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) if x[i] <= lo => lo + 1.0,
                (false, true) if x[i] >= hi => hi - 1.0,
                _ => x[i],
            };
        }
    }
    x
}

/// Physically consistent weighted least squares over all standard
/// parameters.
pub fn solve_feasible(problem: &IdentificationProblem, model: &RobotModel) -> Result<IdentifiedParameters> {
    if problem.w.nrows() == 0 {
        return Err(Error::InvalidArgument("problem has no rows".into()));
    }
    if problem.w.ncols() != model.parameter_count() {
        return Err(Error::Dimension {
            what: "regressor columns",
            expected: model.parameter_count(),
            got: problem.w.ncols(),
        });
    }
    let (a, y) = problem.weighted();
    let (linear, lmis) = constraints(model, problem);
    let bp = BarrierProblem::new(a, y, linear, lmis)?;
    let x0 = starting_point(model, problem);
    if !bp.is_strictly_feasible(&x0) {
        return Err(Error::Infeasible("bounds contradict the physical-consistency constraints".into()));
    }
    let sol = bp.solve(x0, &BarrierOptions::default())?;
    let delta = ParameterVector::from_values(model.layout().clone(), sol.x)?;
    let residual = problem.residual(&delta.values);
    Ok(IdentifiedParameters {
        standard: recover_standard(model, &delta),
        feasibility_margins: feasibility_margins(model, &delta),
        residual,
        duality_gap: sol.gap,
        newton_iterations: sol.newton_iterations,
        delta,
    })
}

/// Averages least-squares polynomial fits to constant-velocity sweeps in
/// both directions, cancelling the symmetric friction. Coefficients are in
/// ascending powers.
pub fn fit_cable_polynomial(q: &[f64], tau_plus: &[f64], tau_minus: &[f64], degree: usize) -> Result<Vec<f64>> {
    if q.len() != tau_plus.len() || q.len() != tau_minus.len() {
        return Err(Error::Dimension {
            what: "sweep samples",
            expected: q.len(),
            got: tau_plus.len().min(tau_minus.len()),
        });
    }
    if q.len() < degree + 1 {
        return Err(Error::InvalidArgument(format!(
            "{} samples cannot determine a degree-{degree} polynomial",
            q.len()
        )));
    }
    let v = DMatrix::from_fn(q.len(), degree + 1, |i, p| q[i].powi(p as i32));
    let plus = least_squares(&v, &DVector::from_column_slice(tau_plus))?;
    let minus = least_squares(&v, &DVector::from_column_slice(tau_minus))?;
    Ok(((plus + minus) * 0.5).iter().copied().collect())
}

/// Relative RMS prediction errors in percent.
#[derive(Clone, Debug)]
pub struct PredictionError {
    pub per_joint: Vec<f64>,
    pub overall: f64,
    /// Measured cable-free torques, rows = samples.
    pub measured: DMatrix<f64>,
    pub predicted: DMatrix<f64>,
    pub t: Vec<f64>,
}

fn prediction_error(
    model: &RobotModel,
    log: &ProcessedLog,
    predict: impl Fn(&DMatrix<f64>) -> DVector<f64>,
) -> Result<PredictionError> {
    let n_m = model.motor_count();
    let (w, omega) = log_regression(model, log)?;
    let hat = predict(&w);
    let n = log.len();
    let measured = DMatrix::from_fn(n, n_m, |s, m| omega[s * n_m + m]);
    let predicted = DMatrix::from_fn(n, n_m, |s, m| hat[s * n_m + m]);
    let mut per_joint = Vec::with_capacity(n_m);
    for m in 0..n_m {
        let norm = measured.column(m).norm();
        if !(norm > 0.0) {
            return Err(Error::Signal(format!(
                "torque channel `{}` has zero norm",
                model.motor_names()[m]
            )));
        }
        per_joint.push(100.0 * (measured.column(m) - predicted.column(m)).norm() / norm);
    }
    let overall = 100.0 * (&omega - &hat).norm() / omega.norm();
    Ok(PredictionError {
        per_joint,
        overall,
        measured,
        predicted,
        t: log.log.t.clone(),
    })
}

/// `‖ω − Wδ‖ / ‖ω‖` per motor and overall on a processed test log.
pub fn relative_prediction_error(model: &RobotModel, delta: &ParameterVector, log: &ProcessedLog) -> Result<PredictionError> {
    if delta.len() != model.parameter_count() {
        return Err(Error::Dimension {
            what: "parameter vector",
            expected: model.parameter_count(),
            got: delta.len(),
        });
    }
    prediction_error(model, log, |w| w * &delta.values)
}

/// As [`relative_prediction_error`] for base parameters on the given
/// independent columns.
pub fn relative_prediction_error_base(
    model: &RobotModel,
    independent: &[usize],
    delta_b: &DVector<f64>,
    log: &ProcessedLog,
) -> Result<PredictionError> {
    if independent.len() != delta_b.len() || independent.iter().any(|&i| i >= model.parameter_count()) {
        return Err(Error::Dimension {
            what: "base parameters",
            expected: independent.len(),
            got: delta_b.len(),
        });
    }
    prediction_error(model, log, |w| w.select_columns(independent) * delta_b)
}

impl PredictionError {
    /// `t, measured1..n, predicted1..n`.
    pub fn to_csv(&self) -> String {
        let n_m = self.measured.ncols();
        let mut s = String::from("t");
        for k in 1..=n_m {
            s.push_str(&format!(",measured{k}"));
        }
        for k in 1..=n_m {
            s.push_str(&format!(",predicted{k}"));
        }
        s.push('\n');
        for (i, t) in self.t.iter().enumerate() {
            s.push_str(&t.to_string());
            for k in 0..n_m {
                s.push_str(&format!(",{}", self.measured[(i, k)]));
            }
            for k in 0..n_m {
                s.push_str(&format!(",{}", self.predicted[(i, k)]));
            }
            s.push('\n');
        }
        s
    }
}

/// Standard parameters of one link as written to parameter files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub joint: String,
    pub mass: f64,
    pub com: Option<[f64; 3]>,
    /// Row-major inertia about the centre of mass.
    pub inertia_com: Option<[[f64; 3]; 3]>,
    pub first_moment: [f64; 3],
    /// Row-major inertia about the link frame origin.
    pub inertia_frame: [[f64; 3]; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseRecord {
    pub label: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub residual: f64,
    pub duality_gap: Option<f64>,
    pub newton_iterations: Option<usize>,
    pub samples: usize,
}

/// Output of `identify`: either full standard parameters or base parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterFile {
    pub model: String,
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameters: Option<Vec<ParameterRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub links: Option<Vec<LinkRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasibility_margins: Option<Vec<Margin>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_parameters: Option<Vec<BaseRecord>>,
    pub diagnostics: SolverDiagnostics,
}

fn rows3(m: &nalgebra::Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

impl ParameterFile {
    pub fn from_feasible(model: &RobotModel, p: &IdentifiedParameters, samples: usize) -> Self {
        let links = p
            .delta
            .layout()
            .links()
            .map(|k| {
                let b = p.delta.inertial(k).expect("link block");
                let s = b.to_standard(MASS_FLOOR);
                LinkRecord {
                    joint: model.joints()[k].name.clone(),
                    mass: b.mass,
                    com: s.map(|s| [s.com.x, s.com.y, s.com.z]),
                    inertia_com: s.map(|s| rows3(&s.inertia_com)),
                    first_moment: [b.first_moment.x, b.first_moment.y, b.first_moment.z],
                    inertia_frame: rows3(&b.inertia),
                }
            })
            .collect();
        ParameterFile {
            model: model.name().to_string(),
            method: "feasible".into(),
            parameters: Some(p.delta.to_records()),
            links: Some(links),
            feasibility_margins: Some(p.feasibility_margins.clone()),
            base_parameters: None,
            diagnostics: SolverDiagnostics {
                residual: p.residual,
                duality_gap: Some(p.duality_gap),
                newton_iterations: Some(p.newton_iterations),
                samples,
            },
        }
    }

    pub fn from_base(model: &RobotModel, reduction: &BaseReduction, est: &BaseEstimate, samples: usize) -> Self {
        let layout = model.layout();
        ParameterFile {
            model: model.name().to_string(),
            method: "ols-base".into(),
            parameters: None,
            links: None,
            feasibility_margins: None,
            base_parameters: Some(
                reduction
                    .independent
                    .iter()
                    .zip(est.delta_b.iter())
                    .map(|(&i, &value)| BaseRecord {
                        label: layout.label(i),
                        value,
                    })
                    .collect(),
            ),
            diagnostics: SolverDiagnostics {
                residual: est.residual,
                duality_gap: None,
                newton_iterations: None,
                samples,
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("parameter file serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Standard parameters, if present.
    pub fn delta(&self, model: &RobotModel) -> Result<Option<ParameterVector>> {
        self.parameters
            .as_ref()
            .map(|r| ParameterVector::from_records(model.layout().clone(), r))
            .transpose()
    }

    /// Independent column indices and values of base parameters, if present.
    pub fn base(&self, model: &RobotModel) -> Result<Option<(Vec<usize>, DVector<f64>)>> {
        let Some(records) = &self.base_parameters else { return Ok(None) };
        let layout = model.layout();
        let labels: Vec<String> = (0..layout.len()).map(|i| layout.label(i)).collect();
        let mut idx = Vec::with_capacity(records.len());
        for (k, r) in records.iter().enumerate() {
            let i = labels
                .iter()
                .position(|l| *l == r.label)
                .ok_or_else(|| Error::validation(format!("base_parameters[{k}]"), format!("unknown `{}`", r.label)))?;
            idx.push(i);
        }
        Ok(Some((idx, DVector::from_iterator(records.len(), records.iter().map(|r| r.value)))))
    }
}
