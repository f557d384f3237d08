//! Synthetic bench: ground-truth parameters, simulated logs and an
//! energy-based torque oracle used to cross-check the regressor.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::{eval_trajectory, FourierTrajectory};
use crate::kinematics::frame_positions;
use crate::model::{JointKind, Parent, RobotModel, SpringKind};
use crate::regressor::{
    cable_torque, full_regressor, BarycentricInertia, ParamKind, ParameterRecord, ParameterVector, StandardInertia,
};
use crate::signals::JointLog;

const NOISE_SALT: u64 = 0x6e6f_6973_6521;
const POSITION_NOISE_SALT: u64 = 0x706f_736e_6f69;
const REJECTION_BUDGET: usize = 10_000;
/// Minimum feasibility margin of sampled parameters.
pub const TRUTH_MARGIN: f64 = 1e-6;

/// Known parameters that generate a synthetic log.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub delta_star: ParameterVector,
    pub seed: u64,
    /// Torque noise standard deviation as a fraction of each channel's range.
    pub noise_sigma_fraction: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthFile {
    seed: u64,
    noise_sigma_fraction: f64,
    parameters: Vec<ParameterRecord>,
}

impl GroundTruth {
    pub fn with_noise(mut self, fraction: f64) -> Self {
        self.noise_sigma_fraction = fraction;
        self
    }

    pub fn to_json(&self) -> String {
        let f = TruthFile {
            seed: self.seed,
            noise_sigma_fraction: self.noise_sigma_fraction,
            parameters: self.delta_star.to_records(),
        };
        serde_json::to_string_pretty(&f).expect("truth serializes")
    }

    pub fn from_json(model: &RobotModel, text: &str) -> Result<Self> {
        let f: TruthFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(GroundTruth {
            delta_star: ParameterVector::from_records(model.layout().clone(), &f.parameters)?,
            seed: f.seed,
            noise_sigma_fraction: f.noise_sigma_fraction,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(model: &RobotModel, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(model, &text)
    }
}

fn sample_link(rng: &mut ChaCha8Rng, lower: Vector3<f64>, upper: Vector3<f64>) -> Option<BarycentricInertia> {
    let center = (lower + upper) * 0.5;
    let half = (upper - lower) * 0.45;
    for _ in 0..REJECTION_BUDGET {
        let mass = rng.random_range(0.1..5.0);
        let com = Vector3::from_fn(|i, _| center[i] + half[i] * rng.random_range(-1.0..1.0));
        let p: [f64; 3] = std::array::from_fn(|_| 10f64.powf(rng.random_range(-4.0..-1.0)));
        if p[0] + p[1] < p[2] * (1.0 + 1e-3) || p[1] + p[2] < p[0] * (1.0 + 1e-3) || p[0] + p[2] < p[1] * (1.0 + 1e-3) {
            continue;
        }
        let axis = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        if axis.norm() < 1e-6 {
            continue;
        }
        let rot = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(axis)).to_rotation_matrix();
        let inertia_com = rot.matrix() * Matrix3::from_diagonal(&Vector3::from(p)) * rot.matrix().transpose();
        let b = BarycentricInertia::from_standard(&StandardInertia {
            mass,
            com,
            inertia_com: (inertia_com + inertia_com.transpose()) * 0.5,
        });
        if b.pseudo_inertia().symmetric_eigenvalues().min() >= TRUTH_MARGIN {
            return Some(b);
        }
    }
    None
}

/// Draws a physically feasible parameter vector, deterministic per seed.
pub fn sample_feasible_parameters(model: &RobotModel, seed: u64) -> Result<GroundTruth> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut delta = ParameterVector::zeros(model.layout().clone());
    for (j, joint) in model.joints().iter().enumerate() {
        if joint.link_inertia {
            let hull = model
                .com_hull(j)
                .ok_or_else(|| Error::Infeasible(format!("link `{}` has no centre-of-mass hull", joint.name)))?;
            let b = sample_link(&mut rng, hull.lower, hull.upper)
                .ok_or_else(|| Error::Infeasible(format!("rejection budget exhausted on link `{}`", joint.name)))?;
            delta.set_inertial(j, &b);
        }
        if joint.friction {
            delta.set(j, ParamKind::Fv, rng.random_range(0.01..0.5));
            delta.set(j, ParamKind::Fc, rng.random_range(0.01..0.5));
            delta.set(j, ParamKind::Fo, rng.random_range(-0.2..0.2));
        }
        if joint.motor_inertia {
            delta.set(j, ParamKind::Im, rng.random_range(1e-3..5e-2));
        }
    }
    for spring in model.springs() {
        let k = match spring.kind {
            SpringKind::Torsional => rng.random_range(0.05..0.5),
            SpringKind::Extension { .. } => rng.random_range(20.0..200.0),
        };
        delta.set(spring.joint, ParamKind::Ks, k);
    }
    Ok(GroundTruth {
        delta_star: delta,
        seed,
        noise_sigma_fraction: 0.0,
    })
}

fn sample_rng(seed: u64, salt: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(index as u64);
    rng
}

/// Simulates `duration` seconds at `fs` Hz with torque noise only.
pub fn simulate_log(
    model: &RobotModel,
    truth: &GroundTruth,
    traj: &FourierTrajectory,
    fs: f64,
    duration: f64,
) -> Result<JointLog> {
    simulate_log_with(model, truth, traj, fs, duration, 0.0)
}

/// As [`simulate_log`], adding Gaussian noise of standard deviation
/// `position_noise` to the logged positions.
pub fn simulate_log_with(
    model: &RobotModel,
    truth: &GroundTruth,
    traj: &FourierTrajectory,
    fs: f64,
    duration: f64,
    position_noise: f64,
) -> Result<JointLog> {
    traj.check_model(model)?;
    if !(fs > 0.0 && fs.is_finite()) || !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::InvalidArgument("rate and duration must be positive".into()));
    }
    if !(truth.noise_sigma_fraction >= 0.0) || !(position_noise >= 0.0) {
        return Err(Error::InvalidArgument("noise levels must be non-negative".into()));
    }
    if truth.delta_star.len() != model.parameter_count() {
        return Err(Error::Dimension {
            what: "ground-truth parameters",
            expected: model.parameter_count(),
            got: truth.delta_star.len(),
        });
    }
    let n = (duration * fs).round() as usize + 1;
    let n_m = model.motor_count();
    let t: Vec<f64> = (0..n).map(|i| i as f64 / fs).collect();
    let rows: Vec<(DVector<f64>, DVector<f64>, DVector<f64>)> = t
        .par_iter()
        .map(|&ti| {
            let s = eval_trajectory(traj, ti);
            let tau = full_regressor(model, &s.q, &s.dq, &s.ddq)?.torque(&truth.delta_star) + cable_torque(model, &s.q);
            Ok((s.q, s.dq, tau))
        })
        .collect::<Result<_>>()?;
    let mut q = DMatrix::from_fn(n, n_m, |i, k| rows[i].0[k]);
    let dq = DMatrix::from_fn(n, n_m, |i, k| rows[i].1[k]);
    let mut tau = DMatrix::from_fn(n, n_m, |i, k| rows[i].2[k]);

    if truth.noise_sigma_fraction > 0.0 {
        let sigma: Vec<f64> = (0..n_m)
            .map(|k| {
                let c = tau.column(k);
                truth.noise_sigma_fraction * (c.max() - c.min())
            })
            .collect();
        for i in 0..n {
            let mut rng = sample_rng(truth.seed, NOISE_SALT, i);
            for k in 0..n_m {
                let z: f64 = rng.sample(StandardNormal);
                tau[(i, k)] += sigma[k] * z;
            }
        }
    }
    if position_noise > 0.0 {
        for i in 0..n {
            let mut rng = sample_rng(truth.seed, POSITION_NOISE_SALT, i);
            for k in 0..n_m {
                let z: f64 = rng.sample(StandardNormal);
                q[(i, k)] += position_noise * z;
            }
        }
    }
    JointLog::new(t, q, dq, tau)
}

/// Kinetic and potential energy of all links.
fn energies(model: &RobotModel, delta: &ParameterVector, q_m: &DVector<f64>, dq_m: &DVector<f64>) -> (f64, f64) {
    let c = model.coupling();
    let poses = frame_positions(model, &c.complete(q_m));
    let joints = model.joints();
    let rates: Vec<f64> = joints.iter().map(|j| j.motor_row.dot(dq_m)).collect();
    let g = model.gravity();
    let (mut kin, mut pot) = (0.0, 0.0);
    for k in delta.layout().links() {
        let b = delta.inertial(k).expect("link block");
        let (rot, p) = (poses[k].rotation, poses[k].translation);
        let mut w = Vector3::zeros();
        let mut v = Vector3::zeros();
        let mut cur = Parent::Joint(k);
        while let Parent::Joint(j) = cur {
            let z = poses[j].rotation.column(2).into_owned();
            match joints[j].kind {
                JointKind::Revolute => {
                    w += z * rates[j];
                    v += z.cross(&(p - poses[j].translation)) * rates[j];
                }
                JointKind::Prismatic => v += z * rates[j],
                JointKind::Fixed => {}
            }
            cur = joints[j].parent;
        }
        let l_w = rot * b.first_moment;
        let inertia_w = rot * b.inertia * rot.transpose();
        kin += 0.5 * b.mass * v.norm_squared() + v.dot(&w.cross(&l_w)) + 0.5 * w.dot(&(inertia_w * w));
        pot -= g.dot(&(p * b.mass + l_w));
    }
    (kin, pot)
}

/// Generalized momentum `∂K/∂q̇`. `K` is quadratic in `q̇`, so a unit
/// central step is exact.
fn momentum(model: &RobotModel, delta: &ParameterVector, q: &DVector<f64>, dq: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(q.len(), |i, _| {
        let mut up = dq.clone();
        up[i] += 1.0;
        let mut down = dq.clone();
        down[i] -= 1.0;
        (energies(model, delta, q, &up).0 - energies(model, delta, q, &down).0) * 0.5
    })
}

/// Central difference with one level of Richardson extrapolation.
fn richardson<F: Fn(f64) -> DVector<f64>>(f: F, h: f64) -> DVector<f64> {
    let d = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    (d(h * 0.5) * 4.0 - d(h)) / 3.0
}

const ORACLE_STEP: f64 = 1e-6;

/// Motor torques from the Euler-Lagrange equations over motor coordinates,
/// with friction, motor inertia and springs added in closed form. Cable
/// torque is not included.
pub fn lagrangian_oracle(
    model: &RobotModel,
    delta: &ParameterVector,
    q_m: &DVector<f64>,
    dq_m: &DVector<f64>,
    ddq_m: &DVector<f64>,
) -> DVector<f64> {
    let n = model.motor_count();
    // d/dt ∂L/∂q̇ = (∂p/∂q)·q̇ + M·q̈, and M·q̈ is the momentum at velocity q̈
    let speed = dq_m.amax();
    let mut tau = momentum(model, delta, q_m, ddq_m);
    if speed > 0.0 {
        let h = ORACLE_STEP / speed;
        tau += richardson(|s| momentum(model, delta, &(q_m + dq_m * s), dq_m), h);
    }
    let lagrangian = |q: &DVector<f64>| {
        let (k, p) = energies(model, delta, q, dq_m);
        k - p
    };
    for i in 0..n {
        let grad = richardson(
            |s| {
                let mut q = q_m.clone();
                q[i] += s;
                DVector::from_element(1, lagrangian(&q))
            },
            ORACLE_STEP,
        );
        tau[i] -= grad[0];
    }

    for (j, joint) in model.joints().iter().enumerate() {
        let mut joint_tau = 0.0;
        if joint.friction {
            let v = joint.motor_row.dot(dq_m);
            let s = if v > 1e-12 {
                1.0
            } else if v < -1e-12 {
                -1.0
            } else {
                0.0
            };
            let p = |k| delta.get(j, k).unwrap_or(0.0);
            joint_tau += p(ParamKind::Fv) * v + p(ParamKind::Fc) * s + p(ParamKind::Fo);
        }
        if let (true, Some(m)) = (joint.motor_inertia, joint.motor) {
            tau[m] += delta.get(j, ParamKind::Im).unwrap_or(0.0) * ddq_m[m];
        }
        tau.axpy(joint_tau, &joint.motor_row, 1.0);
    }
    for spring in model.springs() {
        let joint = &model.joints()[spring.joint];
        let q = joint.motor_row.dot(q_m) + (joint.motor_offset - joint.offset);
        let dl = match spring.kind {
            SpringKind::Torsional => -q,
            SpringKind::Extension { h_s, r_s, q_o, l_r } => {
                let angle = PI + q_o - q;
                let l_s = (h_s * h_s + r_s * r_s - 2.0 * h_s * r_s * angle.cos()).sqrt();
                (l_s - l_r) * h_s * r_s * angle.sin() / l_s
            }
        };
        let k = delta.get(spring.joint, ParamKind::Ks).unwrap_or(0.0);
        tau.axpy(k * dl, &joint.motor_row, 1.0);
    }
    tau
}
