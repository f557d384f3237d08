mod common;

use dynident::model::{validate_coupling, JointKind, Parent};
use dynident::{Error, RobotModel};
use nalgebra::{DMatrix, DVector};

fn q(v: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(v)
}

#[test]
fn mtm_coupling_block_has_the_wrist_ratio() {
    let model = common::mtm();
    let a = model.coupling().dvrk_matrix();
    let expected = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.6697, -0.6697, 1.0]);
    assert_eq!(a.view((1, 1), (3, 3)).into_owned(), expected);
    let report = validate_coupling(&model).unwrap();
    assert!(report.ok());
    assert_eq!(report.blocks.len(), 1);
}

#[test]
fn mtm_fourth_joint_follows_third() {
    let model = common::mtm();
    let c = model.coupling();
    // q3 = 1 with q4 held at zero on the motor side
    let qm = q(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    let qc = c.complete(&qm);
    let get = |name: &str| qc[c.coordinate_index(name).unwrap()];
    assert_eq!(get("q3"), 1.0);
    assert!((get("q4") + 0.6697).abs() < 1e-15);
}

#[test]
fn mtm_parallelogram_coordinates() {
    let model = common::mtm();
    let c = model.coupling();
    let qb = q(&[0.1, 0.4, -0.3, 0.2, 0.5, -0.6, 0.7]);
    let qc = c.complete(&c.motor_from_basis(&qb));
    let get = |name: &str| qc[c.coordinate_index(name).unwrap()];
    assert!((get("q3p") - 0.1).abs() < 1e-12);
    assert!((get("q3pp") - 0.3).abs() < 1e-12);
    assert!((get("q3ppp") + 0.3).abs() < 1e-12);
}

#[test]
fn psm_wrist_block_entries() {
    let model = common::psm();
    let a = model.coupling().dvrk_matrix();
    let expected = DMatrix::from_row_slice(
        3,
        3,
        &[1.0186, 0.0, 0.0, -0.8306, 0.6089, 0.6089, 0.0, -1.2177, 1.2177],
    );
    assert_eq!(a.view((4, 4), (3, 3)).into_owned(), expected);
    assert_eq!(a.view((0, 0), (4, 4)).into_owned(), DMatrix::identity(4, 4));
}

#[test]
fn psm_gripper_coordinates() {
    let model = common::psm();
    let c = model.coupling();
    // dVRK jaw angle 0.4 around a mean of 0.1: fingers at -0.1 and 0.3
    let qb = q(&[0.0, 0.0, 0.1, 0.0, 0.0, -0.1, 0.3]);
    let qm = c.motor_from_basis(&qb);
    let d = c.dvrk_matrix() * &qm;
    assert!((d[5] - 0.1).abs() < 1e-12);
    assert!((d[6] - 0.4).abs() < 1e-12);
    let qc = c.complete(&qm);
    assert!((qc[c.coordinate_index("jaw").unwrap()] - 0.4).abs() < 1e-12);
}

#[test]
fn basis_round_trip_on_shipped_models() {
    for model in [common::mtm(), common::psm()] {
        let c = model.coupling();
        let qb = DVector::from_fn(c.basis_selector.len(), |i, _| 0.3 * (i as f64 + 1.0).sin());
        let back = c.basis(&c.motor_from_basis(&qb));
        assert!((back - &qb).amax() < 1e-12);
    }
}

#[test]
fn motor_rows_of_e_are_identity() {
    for model in [common::mtm(), common::psm()] {
        let c = model.coupling();
        let n_m = c.motor_count();
        let rows = c.e.rows(c.complete_count() - n_m, n_m).into_owned();
        assert_eq!(rows, DMatrix::identity(n_m, n_m));
    }
}

#[test]
fn shipped_structure() {
    let mtm = common::mtm();
    assert_eq!(mtm.motor_count(), 7);
    assert_eq!(mtm.joints().len(), 10);
    assert_eq!(mtm.parameter_count(), 122);
    let m4 = &mtm.joints()[mtm.joint_index("M4").unwrap()];
    assert_eq!(m4.parent, Parent::Detached);
    assert!(m4.motor_inertia && !m4.link_inertia);
    assert_eq!(mtm.cables().len(), 1);
    assert_eq!(mtm.cables()[0].coefficients.len(), 8);

    let psm = common::psm();
    assert_eq!(psm.motor_count(), 7);
    assert_eq!(psm.parameter_count(), 115);
    let fixed = &psm.joints()[psm.joint_index("2'").unwrap()];
    assert_eq!(fixed.kind, JointKind::Fixed);
    let f67 = &psm.joints()[psm.joint_index("F67").unwrap()];
    assert!(f67.friction && !f67.in_tree());
}

#[test]
fn json_round_trip_is_canonical() {
    for model in [common::mtm(), common::psm(), common::planar_2r()] {
        let text = model.to_json();
        let again = RobotModel::from_json(&text).unwrap();
        assert_eq!(again, model);
        assert_eq!(again.to_json(), text);
    }
}

fn edit(model: &RobotModel, f: impl FnOnce(&mut serde_json::Value)) -> dynident::Result<RobotModel> {
    let mut v: serde_json::Value = serde_json::from_str(&model.to_json()).unwrap();
    f(&mut v);
    RobotModel::from_json(&v.to_string())
}

#[test]
fn singular_block_is_rejected() {
    let err = edit(&common::psm(), |v| {
        v["coupling_blocks"][0]["matrix"] = serde_json::json!([[1, 0, 0], [0, 1, 1], [0, 1, 1]]);
    })
    .unwrap_err();
    assert!(matches!(err, Error::SingularCoupling(_)), "{err}");
}

#[test]
fn invalid_files_name_the_offending_field() {
    let base = common::planar_2r();
    let cases: Vec<Box<dyn FnOnce(&mut serde_json::Value)>> = vec![
        Box::new(|v| v["joint_limits"][0]["q_min"] = 5.0.into()),
        Box::new(|v| v["joints"][1]["predecessor"] = "nowhere".into()),
        Box::new(|v| v["joints"][0]["coordinate"]["terms"] = serde_json::json!({ "unknown": 1.0 })),
        Box::new(|v| v["basis"] = serde_json::json!(["q1"])),
        Box::new(|v| v["surprise"] = 1.into()),
    ];
    for case in cases {
        let err = edit(&base, case).unwrap_err();
        assert!(err.is_usage(), "{err}");
    }
}

#[test]
fn unparsable_text_is_a_parse_error() {
    assert!(matches!(RobotModel::from_json("{ not json"), Err(Error::Parse(_))));
}

#[test]
fn degree_strings_are_accepted() {
    let m = common::pendulum();
    assert!((m.joints()[0].dh.alpha_prev - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
}
