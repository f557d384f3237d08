//! Modified-DH forward kinematics and coordinate expansion.

use nalgebra::{DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::model::{JointKind, Parent, RobotModel};

/// Motor and complete coordinates with their first two derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateState {
    pub q_m: DVector<f64>,
    pub dq_m: DVector<f64>,
    pub ddq_m: DVector<f64>,
    pub q_c: DVector<f64>,
    pub dq_c: DVector<f64>,
    pub ddq_c: DVector<f64>,
}

/// Rigid transform `x_parent = rotation * x_child + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FramePose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for FramePose {
    fn default() -> Self {
        Self::identity()
    }
}

impl FramePose {
    pub fn identity() -> Self {
        FramePose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn compose(&self, child: &FramePose) -> FramePose {
        FramePose {
            rotation: self.rotation * child.rotation,
            translation: self.rotation * child.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> FramePose {
        let rt = self.rotation.transpose();
        FramePose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Modified-DH link transform `RotX(alpha) TransX(a) RotZ(theta) TransZ(d)`.
pub fn dh_transform(a_prev: f64, alpha_prev: f64, d: f64, theta: f64) -> FramePose {
    let (sa, ca) = alpha_prev.sin_cos();
    let (st, ct) = theta.sin_cos();
    FramePose {
        rotation: Matrix3::new(
            ct, -st, 0.0, //
            st * ca, ct * ca, -sa, //
            st * sa, ct * sa, ca,
        ),
        translation: Vector3::new(a_prev, -sa * d, ca * d),
    }
}

fn check_len(what: &'static str, v: &DVector<f64>, n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension {
            what,
            expected: n,
            got: v.len(),
        });
    }
    Ok(())
}

/// Maps motor coordinates to complete coordinates through `E` and `e0`.
pub fn expand_coordinates(
    model: &RobotModel,
    q_m: &DVector<f64>,
    dq_m: &DVector<f64>,
    ddq_m: &DVector<f64>,
) -> Result<CoordinateState> {
    let n = model.motor_count();
    check_len("q_m", q_m, n)?;
    check_len("dq_m", dq_m, n)?;
    check_len("ddq_m", ddq_m, n)?;
    let c = model.coupling();
    Ok(CoordinateState {
        q_m: q_m.clone(),
        dq_m: dq_m.clone(),
        ddq_m: ddq_m.clone(),
        q_c: c.complete(q_m),
        dq_c: &c.e * dq_m,
        ddq_c: &c.e * ddq_m,
    })
}

/// Joint variable of every joint given complete coordinates.
pub fn joint_values(model: &RobotModel, q_c: &DVector<f64>) -> Vec<f64> {
    model
        .joints()
        .iter()
        .map(|j| j.complete_row.dot(q_c) + j.offset)
        .collect()
}

/// Pose of one joint frame relative to its predecessor.
pub fn local_transform(model: &RobotModel, joint: usize, value: f64) -> FramePose {
    let j = &model.joints()[joint];
    let dh = &j.dh;
    match j.kind {
        JointKind::Revolute => dh_transform(dh.a_prev, dh.alpha_prev, dh.d, dh.theta + value),
        JointKind::Prismatic => dh_transform(dh.a_prev, dh.alpha_prev, dh.d + value, dh.theta),
        JointKind::Fixed => dh_transform(dh.a_prev, dh.alpha_prev, dh.d, dh.theta),
    }
}

/// World pose of every joint frame, indexed like `model.joints()`.
/// Detached sites report the identity pose.
pub fn frame_positions(model: &RobotModel, q_c: &DVector<f64>) -> Vec<FramePose> {
    let values = joint_values(model, q_c);
    let mut poses = vec![FramePose::identity(); model.joints().len()];
    for &k in model.tree_order() {
        let local = local_transform(model, k, values[k]);
        poses[k] = match model.joints()[k].parent {
            Parent::Base => local,
            Parent::Joint(p) => poses[p].compose(&local),
            Parent::Detached => unreachable!("detached sites are not in the tree order"),
        };
    }
    poses
}

/// Convenience wrapper taking motor coordinates.
pub fn frame_positions_motor(model: &RobotModel, q_m: &DVector<f64>) -> Vec<FramePose> {
    frame_positions(model, &model.coupling().complete(q_m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn zero_dh_is_identity() {
        let p = dh_transform(0.0, 0.0, 0.0, 0.0);
        assert_eq!(p, FramePose::identity());
    }

    #[test]
    fn alpha_only_rotates_about_x() {
        let p = dh_transform(0.0, -FRAC_PI_2, 0.0, 0.0);
        let expect = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0);
        assert_relative_eq!(p.rotation, expect, epsilon = 1e-15);
        assert_eq!(p.translation, Vector3::zeros());
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let p = dh_transform(0.3, 0.7, -0.2, 1.1);
        let id = p.compose(&p.inverse());
        assert_relative_eq!(id.rotation, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(id.translation, Vector3::zeros(), epsilon = 1e-12);
    }
}
