//! Linear-in-parameters motor-torque regressor and base-parameter reduction.
//!
//! The inertial part is built by unit-parameter Newton–Euler on the spanning
//! tree: each link's wrench is linear in its ten barycentric parameters, and
//! every ancestor joint picks up its projection. Joint-space torques are then
//! mapped to motor torques through each joint's row of `∂q/∂q^m`.

mod params;
pub mod reduction;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SMatrix, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kinematics::{expand_coordinates, local_transform, CoordinateState};
use crate::model::{JointKind, Parent, RobotModel, SpringKind};

pub use params::{
    BarycentricInertia, ParamEntry, ParamKind, ParameterLayout, ParameterRecord, ParameterVector,
    StandardInertia,
};
pub(crate) use params::skew;
pub use reduction::{base_reduction, qr_column_pivoting, BaseReduction, PivotedQr};

/// Velocities below this magnitude count as zero in the Coulomb term.
pub const COULOMB_DEADBAND: f64 = 1e-12;

/// `H` at one sample: `τ^m = H δ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Regressor {
    pub h: DMatrix<f64>,
}

impl Regressor {
    pub fn torque(&self, delta: &ParameterVector) -> DVector<f64> {
        &self.h * &delta.values
    }
}

type Wrench10 = SMatrix<f64, 6, 10>;

fn sign(v: f64) -> f64 {
    if v > COULOMB_DEADBAND {
        1.0
    } else if v < -COULOMB_DEADBAND {
        -1.0
    } else {
        0.0
    }
}

/// Body-frame wrench regressor: rows are force then moment about the frame
/// origin, columns follow the inertial block order.
fn body_wrench(w: &Vector3<f64>, dw: &Vector3<f64>, a: &Vector3<f64>) -> Wrench10 {
    let k = |v: &Vector3<f64>| {
        SMatrix::<f64, 3, 6>::new(
            v.x, v.y, v.z, 0.0, 0.0, 0.0, //
            0.0, v.x, 0.0, v.y, v.z, 0.0, //
            0.0, 0.0, v.x, 0.0, v.y, v.z,
        )
    };
    let sw = skew(w);
    let mut y = Wrench10::zeros();
    // force = m a + (S(dw) + S(w)²) l
    y.fixed_view_mut::<3, 3>(0, 6).copy_from(&(skew(dw) + sw * sw));
    y.fixed_view_mut::<3, 1>(0, 9).copy_from(a);
    // moment = L dw + w × L w + l × a
    y.fixed_view_mut::<3, 6>(3, 0).copy_from(&(k(dw) + sw * k(w)));
    y.fixed_view_mut::<3, 3>(3, 6).copy_from(&(-skew(a)));
    y
}

/// Per-joint world kinematics used by the inertial regressor.
#[derive(Clone, Debug)]
pub(crate) struct TreeKinematics {
    pub rotation: Vec<nalgebra::Matrix3<f64>>,
    pub position: Vec<Vector3<f64>>,
    pub omega: Vec<Vector3<f64>>,
    pub domega: Vec<Vector3<f64>>,
    pub accel: Vec<Vector3<f64>>,
}

pub(crate) fn tree_kinematics(model: &RobotModel, s: &CoordinateState) -> TreeKinematics {
    let n = model.joints().len();
    let mut tk = TreeKinematics {
        rotation: vec![nalgebra::Matrix3::identity(); n],
        position: vec![Vector3::zeros(); n],
        omega: vec![Vector3::zeros(); n],
        domega: vec![Vector3::zeros(); n],
        accel: vec![Vector3::zeros(); n],
    };
    let base_accel = -model.gravity();
    for &k in model.tree_order() {
        let j = &model.joints()[k];
        let value = j.complete_row.dot(&s.q_c) + j.offset;
        let rate = j.complete_row.dot(&s.dq_c);
        let acc = j.complete_row.dot(&s.ddq_c);
        let local = local_transform(model, k, value);
        let (r_p, p_p, w_p, dw_p, a_p) = match j.parent {
            Parent::Base => (
                nalgebra::Matrix3::identity(),
                Vector3::zeros(),
                Vector3::zeros(),
                Vector3::zeros(),
                base_accel,
            ),
            Parent::Joint(p) => (tk.rotation[p], tk.position[p], tk.omega[p], tk.domega[p], tk.accel[p]),
            Parent::Detached => unreachable!(),
        };
        let rot = r_p * local.rotation;
        let pos = r_p * local.translation + p_p;
        let z = rot.column(2).into_owned();
        let r = pos - p_p;
        let mut a = a_p + dw_p.cross(&r) + w_p.cross(&w_p.cross(&r));
        let (w, dw) = match j.kind {
            JointKind::Revolute => (w_p + z * rate, dw_p + w_p.cross(&(z * rate)) + z * acc),
            JointKind::Prismatic => {
                a += w_p.cross(&z) * (2.0 * rate) + z * acc;
                (w_p, dw_p)
            }
            JointKind::Fixed => (w_p, dw_p),
        };
        tk.rotation[k] = rot;
        tk.position[k] = pos;
        tk.omega[k] = w;
        tk.domega[k] = dw;
        tk.accel[k] = a;
    }
    tk
}

fn add_projected(h: &mut DMatrix<f64>, motor_row: &DVector<f64>, col: usize, joint_value: f64) {
    if joint_value == 0.0 {
        return;
    }
    for (m, &c) in motor_row.iter().enumerate() {
        if c != 0.0 {
            h[(m, col)] += c * joint_value;
        }
    }
}

/// Columns of the link-inertia parameters, all other columns zero.
pub fn inertial_regressor(model: &RobotModel, s: &CoordinateState) -> DMatrix<f64> {
    let layout = model.layout();
    let mut h = DMatrix::zeros(model.motor_count(), layout.len());
    let tk = tree_kinematics(model, s);
    let joints = model.joints();
    for k in layout.links() {
        let start = layout.link_block(k).expect("link has a block");
        let rt = tk.rotation[k].transpose();
        let yb = body_wrench(&(rt * tk.omega[k]), &(rt * tk.domega[k]), &(rt * tk.accel[k]));
        let f = tk.rotation[k] * yb.fixed_rows::<3>(0);
        let n = tk.rotation[k] * yb.fixed_rows::<3>(3);
        let mut cur = Parent::Joint(k);
        while let Parent::Joint(j) = cur {
            let joint = &joints[j];
            let z = tk.rotation[j].column(2).into_owned();
            let row = match joint.kind {
                JointKind::Revolute => {
                    let lever = skew(&(tk.position[k] - tk.position[j]));
                    z.transpose() * (n + lever * f)
                }
                JointKind::Prismatic => z.transpose() * f,
                JointKind::Fixed => nalgebra::SMatrix::<f64, 1, 10>::zeros(),
            };
            for c in 0..10 {
                add_projected(&mut h, &joint.motor_row, start + c, row[c]);
            }
            cur = joint.parent;
        }
    }
    h
}

/// Viscous, Coulomb and offset columns of every friction site.
pub fn friction_regressor(model: &RobotModel, s: &CoordinateState) -> DMatrix<f64> {
    let layout = model.layout();
    let mut h = DMatrix::zeros(model.motor_count(), layout.len());
    for (j, joint) in model.joints().iter().enumerate() {
        if !joint.friction {
            continue;
        }
        let v = joint.rate(&s.dq_m);
        let cols = [(ParamKind::Fv, v), (ParamKind::Fc, sign(v)), (ParamKind::Fo, 1.0)];
        for (kind, value) in cols {
            let c = layout.index_of(j, kind).expect("friction columns exist");
            add_projected(&mut h, &joint.motor_row, c, value);
        }
    }
    h
}

/// Motor-inertia columns: `ddq^m` of the driven motor on that motor's row.
pub fn motor_inertia_regressor(model: &RobotModel, s: &CoordinateState) -> DMatrix<f64> {
    let layout = model.layout();
    let mut h = DMatrix::zeros(model.motor_count(), layout.len());
    for (j, joint) in model.joints().iter().enumerate() {
        if let (true, Some(m)) = (joint.motor_inertia, joint.motor) {
            let c = layout.index_of(j, ParamKind::Im).expect("motor inertia column exists");
            h[(m, c)] = s.ddq_m[m];
        }
    }
    h
}

/// Prolongation `Δl` of a spring at joint coordinate `q` (offset excluded).
pub fn spring_prolongation(kind: &SpringKind, q: f64) -> Option<f64> {
    match *kind {
        SpringKind::Torsional => Some(-q),
        SpringKind::Extension { h_s, r_s, q_o, l_r } => {
            let phi = PI + q_o - q;
            let l2 = h_s * h_s + r_s * r_s - 2.0 * h_s * r_s * phi.cos();
            let l_s = l2.max(0.0).sqrt();
            if l_s < 1e-12 {
                return None;
            }
            let d_s = h_s * r_s * phi.sin() / l_s;
            Some((l_s - l_r) * d_s)
        }
    }
}

pub fn spring_regressor(model: &RobotModel, s: &CoordinateState) -> Result<DMatrix<f64>> {
    let layout = model.layout();
    let mut h = DMatrix::zeros(model.motor_count(), layout.len());
    for spring in model.springs() {
        let joint = &model.joints()[spring.joint];
        let q = joint.coordinate_value(&s.q_m);
        let dl = spring_prolongation(&spring.kind, q)
            .ok_or_else(|| Error::DegenerateSpring(joint.name.clone()))?;
        let c = layout.index_of(spring.joint, ParamKind::Ks).expect("spring column exists");
        add_projected(&mut h, &joint.motor_row, c, dl);
    }
    Ok(h)
}

/// Horner evaluation of `sum(c_i x^i)`.
pub fn polyval(coefficients: &[f64], x: f64) -> f64 {
    coefficients.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Known cable torque on the motors at `q_m`.
pub fn cable_torque(model: &RobotModel, q_m: &DVector<f64>) -> DVector<f64> {
    let mut tau = DVector::zeros(model.motor_count());
    for cable in model.cables() {
        let joint = &model.joints()[cable.joint];
        let t = polyval(&cable.coefficients, joint.coordinate_value(q_m));
        tau.axpy(t, &joint.motor_row, 1.0);
    }
    tau
}

/// Regressor at an already expanded state.
pub fn regressor_at(model: &RobotModel, s: &CoordinateState) -> Result<Regressor> {
    let mut h = inertial_regressor(model, s);
    h += friction_regressor(model, s);
    h += motor_inertia_regressor(model, s);
    h += spring_regressor(model, s)?;
    if !h.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("regressor"));
    }
    Ok(Regressor { h })
}

/// Full motor-torque regressor `H(q^m, dq^m, ddq^m)`.
pub fn full_regressor(
    model: &RobotModel,
    q_m: &DVector<f64>,
    dq_m: &DVector<f64>,
    ddq_m: &DVector<f64>,
) -> Result<Regressor> {
    let s = expand_coordinates(model, q_m, dq_m, ddq_m)?;
    regressor_at(model, &s)
}

/// One sample of motor coordinates with derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct MotorState {
    pub q: DVector<f64>,
    pub dq: DVector<f64>,
    pub ddq: DVector<f64>,
}

/// Stacks `H` over samples, sample-major (`rows = samples × motors`).
pub fn stack_regressor(model: &RobotModel, states: &[MotorState]) -> Result<DMatrix<f64>> {
    let n_m = model.motor_count();
    let n_p = model.parameter_count();
    let blocks: Vec<DMatrix<f64>> = states
        .par_iter()
        .map(|s| full_regressor(model, &s.q, &s.dq, &s.ddq).map(|r| r.h))
        .collect::<Result<_>>()?;
    let mut w = DMatrix::zeros(states.len() * n_m, n_p);
    for (i, b) in blocks.iter().enumerate() {
        w.view_mut((i * n_m, 0), (n_m, n_p)).copy_from(b);
    }
    Ok(w)
}
