#![allow(dead_code)]

use dynident::RobotModel;

/// One revolute link whose axis is horizontal, so gravity acts on it.
pub fn pendulum() -> RobotModel {
    RobotModel::from_json(
        r#"{
          "schema": 1, "name": "pendulum",
          "motors": ["m1"], "dvrk": ["d1"],
          "coordinates": [{ "name": "q1", "terms": { "d1": 1.0 } }],
          "basis": ["q1"],
          "joints": [{
            "name": "1", "kind": "revolute", "predecessor": "base",
            "dh": { "alpha_prev": "90deg" },
            "coordinate": { "terms": { "q1": 1.0 } },
            "link_inertia": true
          }]
        }"#,
    )
    .unwrap()
}

/// Planar two-link arm moving in a vertical plane, inertial parameters only.
pub fn planar_2r() -> RobotModel {
    RobotModel::from_json(
        r#"{
          "schema": 1, "name": "planar 2R",
          "motors": ["m1", "m2"], "dvrk": ["d1", "d2"],
          "coordinates": [
            { "name": "q1", "terms": { "d1": 1.0 } },
            { "name": "q2", "terms": { "d2": 1.0 } }
          ],
          "basis": ["q1", "q2"],
          "joints": [
            { "name": "1", "kind": "revolute", "predecessor": "base",
              "dh": { "alpha_prev": "90deg" },
              "coordinate": { "terms": { "q1": 1.0 } }, "link_inertia": true },
            { "name": "2", "kind": "revolute", "predecessor": "1",
              "dh": { "a_prev": 0.5 },
              "coordinate": { "terms": { "q2": 1.0 } }, "link_inertia": true }
          ],
          "joint_limits": [
            { "coordinate": "q1", "q_min": -3, "q_max": 3, "dq_min": -2, "dq_max": 2 },
            { "coordinate": "q2", "q_min": -3, "q_max": 3, "dq_min": -2, "dq_max": 2 }
          ]
        }"#,
    )
    .unwrap()
}

/// A single joint carrying only friction.
pub fn friction_only() -> RobotModel {
    RobotModel::from_json(
        r#"{
          "schema": 1, "name": "friction",
          "motors": ["m1"], "dvrk": ["d1"],
          "coordinates": [{ "name": "q1", "terms": { "d1": 1.0 } }],
          "basis": ["q1"],
          "joints": [{
            "name": "1", "kind": "revolute", "predecessor": "base",
            "coordinate": { "terms": { "q1": 1.0 } },
            "friction": true
          }],
          "joint_limits": [
            { "coordinate": "q1", "q_min": -1, "q_max": 1, "dq_min": -1, "dq_max": 1 }
          ]
        }"#,
    )
    .unwrap()
}

/// Two identical links on the same axis, whose parameters can only be
/// identified in sum.
pub fn coincident_links() -> RobotModel {
    RobotModel::from_json(
        r#"{
          "schema": 1, "name": "coincident",
          "motors": ["m1"], "dvrk": ["d1"],
          "coordinates": [{ "name": "q1", "terms": { "d1": 1.0 } }],
          "basis": ["q1"],
          "joints": [
            { "name": "a", "kind": "revolute", "predecessor": "base",
              "dh": { "alpha_prev": "90deg" },
              "coordinate": { "terms": { "q1": 1.0 } }, "link_inertia": true },
            { "name": "b", "kind": "revolute", "predecessor": "base",
              "dh": { "alpha_prev": "90deg" },
              "coordinate": { "terms": { "q1": 1.0 } }, "link_inertia": true }
          ]
        }"#,
    )
    .unwrap()
}

pub fn mtm() -> RobotModel {
    dynident::shipped_model("mtm").unwrap()
}

pub fn psm() -> RobotModel {
    dynident::shipped_model("psm").unwrap()
}

/// Relative discrepancy `|a − b| / max(|b|, floor)`.
pub fn rel(a: &nalgebra::DVector<f64>, b: &nalgebra::DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}
