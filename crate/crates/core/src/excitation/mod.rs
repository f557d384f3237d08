//! Fourier-series excitation trajectories and condition-number optimization.
//!
//! Each motor coordinate follows
//! `q(t) = q_o + s(t) Σ_l (a_l/(ω_f l)) sin(ω_f l t) − (b_l/(ω_f l)) cos(ω_f l t)`
//! where `s(t)` is a quintic smoothstep rising from 0 to 1 over the ramp.

pub mod lbfgs;

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::frame_positions_motor;
use crate::model::RobotModel;
use crate::regressor::{full_regressor, BaseReduction, MotorState};

pub const DEFAULT_RAMP_DURATION: f64 = 5.0;
pub const DEFAULT_SAMPLES_PER_PERIOD: usize = 100;
const SOFT_SHARPNESS: f64 = 20.0;

fn default_ramp() -> f64 {
    DEFAULT_RAMP_DURATION
}

/// Periodic excitation trajectory in motor coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierTrajectory {
    pub motors: Vec<String>,
    /// Fundamental frequency, Hz.
    pub f_f: f64,
    pub n_h: usize,
    pub offsets: Vec<f64>,
    /// `a[k][l-1]`, velocity-scaled sine amplitudes of motor `k`.
    pub a: Vec<Vec<f64>>,
    /// `b[k][l-1]`, velocity-scaled cosine amplitudes of motor `k`.
    pub b: Vec<Vec<f64>>,
    #[serde(default = "default_ramp")]
    pub ramp_duration: f64,
    /// Suggested total duration (ramp plus whole periods), s.
    pub duration: f64,
}

impl FourierTrajectory {
    /// All-zero amplitudes around the given offsets.
    pub fn constant(motors: Vec<String>, f_f: f64, n_h: usize, offsets: Vec<f64>) -> Self {
        let n = motors.len();
        FourierTrajectory {
            motors,
            f_f,
            n_h,
            offsets,
            a: vec![vec![0.0; n_h]; n],
            b: vec![vec![0.0; n_h]; n],
            ramp_duration: DEFAULT_RAMP_DURATION,
            duration: DEFAULT_RAMP_DURATION + 2.0 / f_f,
        }
    }

    pub fn period(&self) -> f64 {
        1.0 / self.f_f
    }

    pub fn motor_count(&self) -> usize {
        self.motors.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_f > 0.0 && self.f_f.is_finite()) {
            return Err(Error::validation("f_f", "fundamental frequency must be positive"));
        }
        if self.n_h == 0 {
            return Err(Error::validation("n_h", "harmonic count must be at least 1"));
        }
        if !(self.ramp_duration >= 0.0) || !(self.duration > 0.0) {
            return Err(Error::validation("duration", "durations must be non-negative"));
        }
        let n = self.motors.len();
        if self.offsets.len() != n || self.a.len() != n || self.b.len() != n {
            return Err(Error::validation("offsets", "one offset and amplitude row per motor required"));
        }
        for (k, (a, b)) in self.a.iter().zip(&self.b).enumerate() {
            if a.len() != self.n_h || b.len() != self.n_h {
                return Err(Error::validation(format!("a[{k}]"), format!("expected {} harmonics", self.n_h)));
            }
        }
        let all = self.offsets.iter().chain(self.a.iter().flatten()).chain(self.b.iter().flatten());
        if !all.into_iter().all(|v| v.is_finite()) {
            return Err(Error::validation("a", "non-finite coefficient"));
        }
        Ok(())
    }

    /// Checks the trajectory drives exactly the model's motors.
    pub fn check_model(&self, model: &RobotModel) -> Result<()> {
        self.validate()?;
        if self.motors != model.motor_names() {
            return Err(Error::Dimension {
                what: "trajectory motors",
                expected: model.motor_count(),
                got: self.motors.len(),
            });
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: FourierTrajectory = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trajectory serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    fn vars_per_motor(&self) -> usize {
        2 * self.n_h + 1
    }

    /// Decision vector `[q_o, a_1..a_nH, b_1..b_nH]` per motor.
    pub fn to_vector(&self) -> DVector<f64> {
        let m = self.vars_per_motor();
        let mut x = DVector::zeros(m * self.motor_count());
        for k in 0..self.motor_count() {
            x[k * m] = self.offsets[k];
            for l in 0..self.n_h {
                x[k * m + 1 + l] = self.a[k][l];
                x[k * m + 1 + self.n_h + l] = self.b[k][l];
            }
        }
        x
    }

    pub fn with_vector(&self, x: &DVector<f64>) -> Self {
        let m = self.vars_per_motor();
        let mut t = self.clone();
        for k in 0..self.motor_count() {
            t.offsets[k] = x[k * m];
            for l in 0..self.n_h {
                t.a[k][l] = x[k * m + 1 + l];
                t.b[k][l] = x[k * m + 1 + self.n_h + l];
            }
        }
        t
    }

    /// Coefficient matrix, one row per motor, in decision-vector order.
    fn coefficient_matrix(&self) -> DMatrix<f64> {
        let m = self.vars_per_motor();
        let x = self.to_vector();
        DMatrix::from_fn(self.motor_count(), m, |k, j| x[k * m + j])
    }

    /// Sample times `[ramp + i·T/n]` covering one post-ramp period.
    pub fn period_times(&self, n: usize) -> Vec<f64> {
        let p = self.period();
        (0..n).map(|i| self.ramp_duration + p * i as f64 / n as f64).collect()
    }

    /// Ramp times at the same spacing as `period_times(n)`.
    fn ramp_times(&self, n: usize) -> Vec<f64> {
        let dt = self.period() / n as f64;
        let count = (self.ramp_duration / dt).ceil() as usize;
        (0..count).map(|i| i as f64 * dt).collect()
    }
}

/// Quintic smoothstep `s`, `s'`, `s''` at time `t` for a ramp of length `tr`.
pub fn envelope(t: f64, tr: f64) -> (f64, f64, f64) {
    if tr <= 0.0 || t >= tr {
        return (1.0, 0.0, 0.0);
    }
    if t <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let u = t / tr;
    let (u2, u3) = (u * u, u * u * u);
    let s = u3 * (10.0 - 15.0 * u + 6.0 * u2);
    let ds = 30.0 * u2 * (1.0 - u) * (1.0 - u) / tr;
    let dds = 60.0 * u * (1.0 - 3.0 * u + 2.0 * u2) / (tr * tr);
    (s, ds, dds)
}

/// Rows mapping a motor's coefficient row to its `q`, `dq`, `ddq` at `t`.
struct TimeBasis {
    q: DVector<f64>,
    dq: DVector<f64>,
    ddq: DVector<f64>,
}

fn time_basis(traj: &FourierTrajectory, t: f64) -> TimeBasis {
    let nh = traj.n_h;
    let w = 2.0 * PI * traj.f_f;
    let (s, ds, dds) = envelope(t, traj.ramp_duration);
    let mut q = DVector::zeros(2 * nh + 1);
    let mut dq = DVector::zeros(2 * nh + 1);
    let mut ddq = DVector::zeros(2 * nh + 1);
    q[0] = 1.0;
    for l in 1..=nh {
        let wl = w * l as f64;
        let (sn, cs) = (wl * t).sin_cos();
        // sine term a: f = sn/wl, f' = cs, f'' = -wl sn
        let (f, f1, f2) = (sn / wl, cs, -wl * sn);
        q[l] = s * f;
        dq[l] = s * f1 + ds * f;
        ddq[l] = s * f2 + 2.0 * ds * f1 + dds * f;
        // cosine term b: f = -cs/wl, f' = sn, f'' = wl cs
        let (f, f1, f2) = (-cs / wl, sn, wl * cs);
        q[nh + l] = s * f;
        dq[nh + l] = s * f1 + ds * f;
        ddq[nh + l] = s * f2 + 2.0 * ds * f1 + dds * f;
    }
    TimeBasis { q, dq, ddq }
}

fn eval_with(coef: &DMatrix<f64>, basis: &TimeBasis) -> MotorState {
    MotorState {
        q: coef * &basis.q,
        dq: coef * &basis.dq,
        ddq: coef * &basis.ddq,
    }
}

/// Analytic position, velocity and acceleration at time `t`.
pub fn eval_trajectory(traj: &FourierTrajectory, t: f64) -> MotorState {
    eval_with(&traj.coefficient_matrix(), &time_basis(traj, t))
}

/// Worst margin of one constraint over the evaluation grid (negative = violated).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintMargin {
    pub name: String,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub margins: Vec<ConstraintMargin>,
    pub grid_points: usize,
}

impl ConstraintReport {
    pub fn min_margin(&self) -> f64 {
        self.margins.iter().map(|m| m.margin).fold(f64::INFINITY, f64::min)
    }

    pub fn is_feasible(&self) -> bool {
        self.margins.iter().all(|m| m.margin >= 0.0)
    }

    pub fn worst(&self) -> Option<&ConstraintMargin> {
        self.margins.iter().min_by(|a, b| a.margin.total_cmp(&b.margin))
    }
}

/// Evaluates joint position/velocity limits and workspace boxes on
/// `grid_points` samples per period over the ramp and one post-ramp period.
///
/// At least `20·n_H` grid points per period are required.
pub fn check_constraints(model: &RobotModel, traj: &FourierTrajectory, grid_points: usize) -> Result<ConstraintReport> {
    traj.check_model(model)?;
    if grid_points < 20 * traj.n_h {
        return Err(Error::InvalidArgument(format!(
            "{grid_points} grid points per period cannot resolve {} harmonics",
            traj.n_h
        )));
    }
    let coef = traj.coefficient_matrix();
    let c = model.coupling();
    let mut times = traj.ramp_times(grid_points);
    times.extend(traj.period_times(grid_points));

    let n_lim = model.limits().len();
    let n_ws = model.workspace().len();
    let per_time: Vec<Vec<f64>> = times
        .par_iter()
        .map(|&t| {
            let s = eval_with(&coef, &time_basis(traj, t));
            let q_c = c.complete(&s.q);
            let dq_c = &c.e * &s.dq;
            let mut out = Vec::with_capacity(2 * n_lim + 3 * n_ws);
            for l in model.limits() {
                let v = q_c[l.coordinate];
                let dv = dq_c[l.coordinate];
                out.push((v - l.q_min).min(l.q_max - v));
                out.push((dv - l.dq_min).min(l.dq_max - dv));
            }
            if n_ws > 0 {
                let frames = frame_positions_motor(model, &s.q);
                for w in model.workspace() {
                    let p = frames[w.joint].translation;
                    for a in 0..3 {
                        out.push((p[a] - w.lower[a]).min(w.upper[a] - p[a]));
                    }
                }
            }
            out
        })
        .collect();

    let mut names = Vec::new();
    for l in model.limits() {
        let n = &c.coordinate_names[l.coordinate];
        names.push(format!("position {n}"));
        names.push(format!("velocity {n}"));
    }
    for w in model.workspace() {
        let f = &model.joints()[w.joint].name;
        for axis in ["x", "y", "z"] {
            names.push(format!("workspace frame {f} {axis}"));
        }
    }
    let margins = names
        .into_iter()
        .enumerate()
        .map(|(i, name)| ConstraintMargin {
            name,
            margin: per_time.iter().map(|v| v[i]).fold(f64::INFINITY, f64::min),
        })
        .collect();
    Ok(ConstraintReport {
        margins,
        grid_points,
    })
}

fn stacked_base(model: &RobotModel, reduction: &BaseReduction, states: &[MotorState]) -> Result<DMatrix<f64>> {
    let n_m = model.motor_count();
    let b = reduction.b();
    let blocks: Vec<DMatrix<f64>> = states
        .par_iter()
        .map(|s| full_regressor(model, &s.q, &s.dq, &s.ddq).map(|r| reduction.select(&r.h)))
        .collect::<Result<_>>()?;
    let mut w = DMatrix::zeros(states.len() * n_m, b);
    for (i, blk) in blocks.iter().enumerate() {
        w.view_mut((i * n_m, 0), (n_m, b)).copy_from(blk);
    }
    Ok(w)
}

/// `σ_max / σ_min`, infinite when rank deficient.
pub fn matrix_condition(w: &DMatrix<f64>) -> f64 {
    if w.ncols() == 0 || w.nrows() < w.ncols() {
        return f64::INFINITY;
    }
    let sv = w.clone().singular_values();
    let (mx, mn) = (sv.max(), sv.min());
    if !(mn > 1e-12 * mx) {
        f64::INFINITY
    } else {
        mx / mn
    }
}

/// `cond₂(W_b)` over `sample_count` uniform samples of one post-ramp period.
pub fn condition_objective(
    model: &RobotModel,
    reduction: &BaseReduction,
    traj: &FourierTrajectory,
    sample_count: usize,
) -> Result<f64> {
    traj.check_model(model)?;
    let coef = traj.coefficient_matrix();
    let states: Vec<MotorState> = traj
        .period_times(sample_count)
        .iter()
        .map(|&t| eval_with(&coef, &time_basis(traj, t)))
        .collect();
    if !states.iter().all(|s| s.q.iter().chain(s.dq.iter()).chain(s.ddq.iter()).all(|v| v.is_finite())) {
        return Err(Error::NonFinite("trajectory state"));
    }
    Ok(matrix_condition(&stacked_base(model, reduction, &states)?))
}

/// Settings of [`optimize_trajectory`].
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeConfig {
    pub f_f: f64,
    pub n_h: usize,
    pub ramp_duration: f64,
    /// Whole post-ramp periods in the suggested duration.
    pub periods: usize,
    pub restarts: usize,
    pub seed: u64,
    pub samples_per_period: usize,
    /// Limits are tightened by this fraction of their span during optimization.
    pub back_off: f64,
    pub penalty_weights: Vec<f64>,
    pub iterations_per_stage: usize,
    /// Grid points per period of the final strict feasibility check.
    pub check_grid: usize,
}

impl OptimizeConfig {
    pub fn new(f_f: f64, n_h: usize) -> Self {
        OptimizeConfig {
            f_f,
            n_h,
            ramp_duration: DEFAULT_RAMP_DURATION,
            periods: 2,
            restarts: 8,
            seed: 0,
            samples_per_period: DEFAULT_SAMPLES_PER_PERIOD,
            back_off: 0.015,
            penalty_weights: vec![10.0, 100.0, 1000.0],
            iterations_per_stage: 80,
            check_grid: 10 * DEFAULT_SAMPLES_PER_PERIOD,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.f_f > 0.0 && self.f_f.is_finite()) {
            return Err(Error::InvalidArgument("f_f must be positive".into()));
        }
        if self.n_h == 0 {
            return Err(Error::InvalidArgument("n_h must be at least 1".into()));
        }
        if self.restarts == 0 || self.samples_per_period == 0 || self.periods == 0 {
            return Err(Error::InvalidArgument("restarts, periods and samples must be positive".into()));
        }
        if self.check_grid < 20 * self.n_h {
            return Err(Error::InvalidArgument("check_grid must be at least 20·n_h".into()));
        }
        if !(0.0..0.5).contains(&self.back_off) {
            return Err(Error::InvalidArgument("back_off must lie in [0, 0.5)".into()));
        }
        Ok(())
    }
}

/// One optimizer iteration. `best` is the lowest condition number of a
/// constraint-satisfying iterate seen so far in log order.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub restart: usize,
    pub iteration: usize,
    pub objective: f64,
    pub best: f64,
}

#[derive(Clone, Debug)]
pub struct OptimizationResult {
    pub trajectory: FourierTrajectory,
    pub condition: f64,
    pub report: ConstraintReport,
    pub log: Vec<LogRow>,
}

pub fn log_to_csv(log: &[LogRow]) -> String {
    let mut s = String::from("restart,iteration,objective,best\n");
    for r in log {
        s.push_str(&format!("{},{},{},{}\n", r.restart, r.iteration, r.objective, r.best));
    }
    s
}

struct Bound {
    row: DVector<f64>,
    offset: f64,
    lo: f64,
    hi: f64,
    scale: f64,
}

struct Problem<'a> {
    model: &'a RobotModel,
    reduction: &'a BaseReduction,
    template: FourierTrajectory,
    objective_basis: Vec<TimeBasis>,
    constraint_basis: Vec<TimeBasis>,
    positions: Vec<Bound>,
    velocities: Vec<Bound>,
    workspace: Vec<(usize, [f64; 3], [f64; 3], [f64; 3])>,
}

impl<'a> Problem<'a> {
    fn new(model: &'a RobotModel, reduction: &'a BaseReduction, config: &OptimizeConfig) -> Self {
        let period = 1.0 / config.f_f;
        let mut template = FourierTrajectory::constant(
            model.motor_names().to_vec(),
            config.f_f,
            config.n_h,
            vec![0.0; model.motor_count()],
        );
        template.ramp_duration = config.ramp_duration;
        template.duration = config.ramp_duration + config.periods as f64 * period;
        let objective_times = template.period_times(config.samples_per_period);
        let objective_basis = objective_times.iter().map(|&t| time_basis(&template, t)).collect();
        let mut ctimes = template.ramp_times(config.samples_per_period);
        ctimes.extend(objective_times.iter().copied());
        let constraint_basis = ctimes.iter().map(|&t| time_basis(&template, t)).collect();

        let c = model.coupling();
        let bo = config.back_off;
        let mut positions = Vec::new();
        let mut velocities = Vec::new();
        for l in model.limits() {
            let row = c.e.row(l.coordinate).transpose();
            let span = l.q_max - l.q_min;
            positions.push(Bound {
                row: row.clone(),
                offset: c.e0[l.coordinate],
                lo: l.q_min + bo * span,
                hi: l.q_max - bo * span,
                scale: span,
            });
            let vspan = l.dq_max - l.dq_min;
            velocities.push(Bound {
                row,
                offset: 0.0,
                lo: l.dq_min + bo * vspan,
                hi: l.dq_max - bo * vspan,
                scale: vspan,
            });
        }
        let workspace = model
            .workspace()
            .iter()
            .map(|w| {
                let size = w.upper - w.lower;
                (
                    w.joint,
                    [0, 1, 2].map(|a| w.lower[a] + bo * size[a]),
                    [0, 1, 2].map(|a| w.upper[a] - bo * size[a]),
                    [0, 1, 2].map(|a| size[a].max(1e-9)),
                )
            })
            .collect();
        Problem {
            model,
            reduction,
            template,
            objective_basis,
            constraint_basis,
            positions,
            velocities,
            workspace,
        }
    }

    fn coef(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let m = 2 * self.template.n_h + 1;
        DMatrix::from_fn(self.model.motor_count(), m, |k, j| x[k * m + j])
    }

    fn flatten(g: &DMatrix<f64>) -> DVector<f64> {
        let (r, c) = g.shape();
        DVector::from_fn(r * c, |i, _| g[(i / c, i % c)])
    }

    /// Exterior penalty on backed-off limits and its gradient.
    fn penalty(&self, coef: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let parts: Vec<(f64, DMatrix<f64>)> = self
            .constraint_basis
            .par_iter()
            .map(|basis| {
                let mut pen = 0.0;
                let mut grad = DMatrix::zeros(coef.nrows(), coef.ncols());
                let s = eval_with(coef, basis);
                for (bounds, state, phi) in [(&self.positions, &s.q, &basis.q), (&self.velocities, &s.dq, &basis.dq)] {
                    for b in bounds {
                        let v = b.row.dot(state) + b.offset;
                        let (viol, sign) = if v < b.lo {
                            (b.lo - v, -1.0)
                        } else if v > b.hi {
                            (v - b.hi, 1.0)
                        } else {
                            continue;
                        };
                        pen += (viol / b.scale).powi(2);
                        let d = 2.0 * viol / (b.scale * b.scale) * sign;
                        for k in 0..coef.nrows() {
                            if b.row[k] != 0.0 {
                                let mut r = grad.row_mut(k);
                                r += phi.transpose() * (d * b.row[k]);
                            }
                        }
                    }
                }
                if !self.workspace.is_empty() {
                    let frames = frame_positions_motor(self.model, &s.q);
                    let mut jac_cache: Option<Vec<Vec<nalgebra::Vector3<f64>>>> = None;
                    for &(joint, lo, hi, scale) in &self.workspace {
                        let p = frames[joint].translation;
                        for a in 0..3 {
                            let (viol, sign) = if p[a] < lo[a] {
                                (lo[a] - p[a], -1.0)
                            } else if p[a] > hi[a] {
                                (p[a] - hi[a], 1.0)
                            } else {
                                continue;
                            };
                            pen += (viol / scale[a]).powi(2);
                            let jac = jac_cache.get_or_insert_with(|| {
                                (0..s.q.len())
                                    .map(|k| {
                                        let h = 1e-6;
                                        let mut qp = s.q.clone();
                                        qp[k] += h;
                                        let fp = frame_positions_motor(self.model, &qp);
                                        fp.iter()
                                            .zip(&frames)
                                            .map(|(x, y)| (x.translation - y.translation) / h)
                                            .collect()
                                    })
                                    .collect()
                            });
                            let d = 2.0 * viol / (scale[a] * scale[a]) * sign;
                            for (k, jk) in jac.iter().enumerate() {
                                let dp = jk[joint][a];
                                if dp != 0.0 {
                                    let mut r = grad.row_mut(k);
                                    r += basis.q.transpose() * (d * dp);
                                }
                            }
                        }
                    }
                }
                (pen, grad)
            })
            .collect();
        let mut pen = 0.0;
        let mut grad = DMatrix::zeros(coef.nrows(), coef.ncols());
        for (p, g) in parts {
            pen += p;
            grad += g;
        }
        (pen, grad)
    }

    fn base_regressor(&self, s: &MotorState) -> Option<DMatrix<f64>> {
        full_regressor(self.model, &s.q, &s.dq, &s.ddq)
            .ok()
            .map(|r| self.reduction.select(&r.h))
    }

    /// Smooth upper bound of `ln cond(W_b)` (log-sum-exp over the singular
    /// values with sharpness `SOFT_SHARPNESS`), its gradient and the exact
    /// condition number.
    fn log_condition(&self, coef: &DMatrix<f64>) -> (f64, DMatrix<f64>, f64) {
        let n_m = self.model.motor_count();
        let infeasible = || (f64::INFINITY, DMatrix::zeros(coef.nrows(), coef.ncols()), f64::INFINITY);
        let states: Vec<MotorState> = self.objective_basis.iter().map(|b| eval_with(coef, b)).collect();
        let Ok(w) = stacked_base(self.model, self.reduction, &states) else {
            return infeasible();
        };
        if w.ncols() == 0 {
            return infeasible();
        }
        let svd = w.svd(true, true);
        let (u, vt) = (svd.u.expect("u computed"), svd.v_t.expect("v computed"));
        let sv = &svd.singular_values;
        let (smax, smin) = (sv.max(), sv.min());
        if !(smin > 1e-12 * smax) {
            return infeasible();
        }
        let cond = smax / smin;
        let p = SOFT_SHARPNESS;
        let logs: Vec<f64> = sv.iter().map(|s| s.ln()).collect();
        let soft = |sign: f64| {
            let m = logs.iter().map(|l| sign * p * l).fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logs.iter().map(|l| (sign * p * l - m).exp()).collect();
            let total: f64 = e.iter().sum();
            ((m + total.ln()) / p, e.into_iter().map(|x| x / total).collect::<Vec<_>>())
        };
        let (hi, w_hi) = soft(1.0);
        let (lo, w_lo) = soft(-1.0);
        let value = hi + lo;
        // d value = Σ_i c_i u_iᵀ dW v_i
        let c: Vec<f64> = (0..sv.len()).map(|i| (w_hi[i] - w_lo[i]) / sv[i]).collect();
        let mut uc = u.clone();
        for (i, ci) in c.iter().enumerate() {
            uc.column_mut(i).scale_mut(*ci);
        }
        let gmat = uc * &vt;
        let bcols = gmat.ncols();
        let grads: Vec<DMatrix<f64>> = states
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let gb = gmat.view((i * n_m, 0), (n_m, bcols));
                let g = |h: &DMatrix<f64>| gb.component_mul(h).sum();
                let mut grad = DMatrix::zeros(n_m, coef.ncols());
                let Some(h0) = self.base_regressor(s) else { return grad };
                let g0 = g(&h0);
                let basis = &self.objective_basis[i];
                for k in 0..n_m {
                    let mut dg = [0.0; 3];
                    for (which, step) in [(0usize, 1e-6), (1, 1e-6), (2, 1.0)] {
                        let mut p = s.clone();
                        match which {
                            0 => p.q[k] += step,
                            1 => p.dq[k] += step,
                            _ => p.ddq[k] += step,
                        }
                        if let Some(h) = self.base_regressor(&p) {
                            dg[which] = (g(&h) - g0) / step;
                        }
                    }
                    let mut r = grad.row_mut(k);
                    r += basis.q.transpose() * (dg[0]);
                    r += basis.dq.transpose() * (dg[1]);
                    r += basis.ddq.transpose() * (dg[2]);
                }
                grad
            })
            .collect();
        let mut grad = DMatrix::zeros(n_m, coef.ncols());
        for g in grads {
            grad += g;
        }
        (value, grad, cond)
    }

    fn evaluate(&self, x: &DVector<f64>, mu: f64) -> (f64, DVector<f64>, f64, f64) {
        let coef = self.coef(x);
        let (lc, gc, cond) = self.log_condition(&coef);
        let (pen, gp) = self.penalty(&coef);
        let value = lc + mu * pen;
        let grad = Self::flatten(&(gc + gp * mu));
        (value, grad, cond, pen)
    }

    /// Random start: offsets centre the limited coordinates, amplitudes are
    /// uniform and then shrunk per motor until every limited coordinate stays
    /// in the middle half of its range.
    fn initial_point(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let n_m = self.model.motor_count();
        let nh = self.template.n_h;
        let m = 2 * nh + 1;
        let c = self.model.coupling();

        let rows = self.positions.len();
        let mut a = DMatrix::zeros(rows + n_m, n_m);
        let mut rhs = DVector::zeros(rows + n_m);
        for (i, b) in self.positions.iter().enumerate() {
            let half = 0.5 * b.scale;
            for k in 0..n_m {
                a[(i, k)] = b.row[k] / half;
            }
            rhs[i] = (0.5 * (b.lo + b.hi) - b.offset) / half;
        }
        for k in 0..n_m {
            a[(rows + k, k)] = 1e-6;
        }
        let center = a.svd(true, true).solve(&rhs, 1e-12).unwrap_or_else(|_| DVector::zeros(n_m));

        let mut coef = DMatrix::zeros(n_m, m);
        for k in 0..n_m {
            coef[(k, 0)] = center[k];
            for j in 1..m {
                coef[(k, j)] = rng.random_range(-1.0..1.0);
            }
        }
        let limits: Vec<(usize, f64, f64, f64, f64)> = self
            .model
            .limits()
            .iter()
            .map(|l| {
                let mid = 0.5 * (l.q_min + l.q_max);
                let room = 0.25 * (l.q_max - l.q_min);
                let vroom = 0.5 * l.dq_min.abs().min(l.dq_max.abs());
                (l.coordinate, mid, room, vroom, 0.0)
            })
            .collect();
        for _ in 0..30 {
            let mut worst = vec![0.0f64; limits.len()];
            for basis in &self.constraint_basis {
                let s = eval_with(&coef, basis);
                let q_c = c.complete(&s.q);
                let dq_c = &c.e * &s.dq;
                for (i, &(ci, mid, room, vroom, _)) in limits.iter().enumerate() {
                    let r = ((q_c[ci] - mid).abs() / room).max(dq_c[ci].abs() / vroom);
                    worst[i] = worst[i].max(r);
                }
            }
            if worst.iter().all(|&r| r <= 1.0) {
                break;
            }
            for k in 0..n_m {
                let f = limits
                    .iter()
                    .zip(&worst)
                    .filter(|((ci, ..), _)| c.e[(*ci, k)] != 0.0)
                    .map(|(_, &r)| r)
                    .fold(0.0, f64::max);
                if f > 1.0 {
                    for j in 1..m {
                        coef[(k, j)] *= 0.95 / f;
                    }
                }
            }
        }
        Self::flatten(&coef)
    }
}

fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

/// Random trajectory drawn exactly like an optimizer start.
pub fn random_trajectory(model: &RobotModel, config: &OptimizeConfig, seed: u64, index: usize) -> Result<FourierTrajectory> {
    config.validate()?;
    let reduction = BaseReduction {
        independent: Vec::new(),
        dependent: Vec::new(),
        k_d: DMatrix::zeros(0, 0),
        parameter_count: model.parameter_count(),
    };
    let problem = Problem::new(model, &reduction, config);
    let x = problem.initial_point(&mut restart_rng(seed, index));
    Ok(problem.template.with_vector(&x))
}

struct RestartOutcome {
    candidate: Option<(f64, DVector<f64>)>,
    rows: Vec<(usize, f64, f64)>,
}

/// Minimizes `cond(W_b)` subject to joint and workspace constraints with a
/// penalty continuation and L-BFGS, over parallel multistarts.
pub fn optimize_trajectory(
    model: &RobotModel,
    reduction: &BaseReduction,
    config: &OptimizeConfig,
) -> Result<OptimizationResult> {
    config.validate()?;
    if reduction.parameter_count != model.parameter_count() {
        return Err(Error::Dimension {
            what: "base reduction parameter count",
            expected: model.parameter_count(),
            got: reduction.parameter_count,
        });
    }
    let problem = Problem::new(model, reduction, config);
    let outcomes: Vec<RestartOutcome> = (0..config.restarts)
        .into_par_iter()
        .map(|restart| {
            let mut rng = restart_rng(config.seed, restart);
            let mut x = problem.initial_point(&mut rng);
            let mut rows = Vec::new();
            let mut candidate: Option<(f64, DVector<f64>)> = None;
            let mut iteration = 0;
            for &mu in &config.penalty_weights {
                let opts = lbfgs::LbfgsOptions {
                    max_iterations: config.iterations_per_stage,
                    ..Default::default()
                };
                let last = std::cell::Cell::new((f64::INFINITY, f64::INFINITY));
                let res = lbfgs::minimize(
                    |x| {
                        let (v, g, cond, pen) = problem.evaluate(x, mu);
                        last.set((cond, pen));
                        (v, g)
                    },
                    x.clone(),
                    &opts,
                    |_, _, value| {
                        iteration += 1;
                        let (cond, pen) = last.get();
                        let feasible_cond = if pen == 0.0 { cond } else { f64::INFINITY };
                        rows.push((iteration, value, feasible_cond));
                    },
                );
                x = res.x;
                let traj = problem.template.with_vector(&x);
                if check_constraints(model, &traj, config.check_grid).is_ok_and(|r| r.is_feasible()) {
                    let (_, _, cond, _) = problem.evaluate(&x, mu);
                    if cond.is_finite() && candidate.as_ref().is_none_or(|(c, _)| cond < *c) {
                        candidate = Some((cond, x.clone()));
                    }
                }
            }
            RestartOutcome { candidate, rows }
        })
        .collect();

    let mut log = Vec::new();
    let mut best = f64::INFINITY;
    for (restart, o) in outcomes.iter().enumerate() {
        for &(iteration, objective, feasible_cond) in &o.rows {
            best = best.min(feasible_cond);
            log.push(LogRow {
                restart,
                iteration,
                objective,
                best,
            });
        }
    }
    let winner = outcomes
        .iter()
        .filter_map(|o| o.candidate.as_ref())
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .ok_or_else(|| Error::Infeasible("no restart produced a constraint-feasible trajectory".into()))?;
    let trajectory = problem.template.with_vector(&winner.1);
    let report = check_constraints(model, &trajectory, config.check_grid)?;
    Ok(OptimizationResult {
        condition: winner.0,
        trajectory,
        report,
        log,
    })
}
