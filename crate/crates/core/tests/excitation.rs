mod common;

use dynident::excitation::{
    check_constraints, condition_objective, envelope, eval_trajectory, matrix_condition, optimize_trajectory,
    random_trajectory, OptimizeConfig,
};
use dynident::regressor::base_reduction;
use dynident::{FourierTrajectory, RobotModel};
use nalgebra::DMatrix;
use std::f64::consts::PI;

/// A single horizontal-axis joint with friction and limits.
fn toy() -> RobotModel {
    RobotModel::from_json(
        r#"{
          "schema": 1, "name": "toy",
          "motors": ["m1"], "dvrk": ["d1"],
          "coordinates": [{ "name": "q1", "terms": { "d1": 1.0 } }],
          "basis": ["q1"],
          "joints": [{
            "name": "1", "kind": "revolute", "predecessor": "base",
            "dh": { "alpha_prev": "90deg" },
            "coordinate": { "terms": { "q1": 1.0 } },
            "link_inertia": true, "friction": true
          }],
          "joint_limits": [
            { "coordinate": "q1", "q_min": -1.5, "q_max": 1.5, "dq_min": -2, "dq_max": 2 }
          ],
          "com_hulls": [{ "frame": "1", "lower": [-0.2, -0.2, -0.2], "upper": [0.2, 0.2, 0.2] }]
        }"#,
    )
    .unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Trajectory shifted in time by `dt`, by rotating each harmonic's phase.
fn shifted(traj: &FourierTrajectory, dt: f64) -> FourierTrajectory {
    let mut out = traj.clone();
    for k in 0..traj.motor_count() {
        for l in 0..traj.n_h {
            let th = 2.0 * PI * traj.f_f * (l + 1) as f64 * dt;
            let (a, b) = (traj.a[k][l], traj.b[k][l]);
            out.a[k][l] = a * th.cos() - b * th.sin();
            out.b[k][l] = a * th.sin() + b * th.cos();
        }
    }
    out
}

#[test]
fn envelope_is_smooth_and_saturates() {
    assert_eq!(envelope(-1.0, 5.0), (0.0, 0.0, 0.0));
    assert_eq!(envelope(5.0, 5.0), (1.0, 0.0, 0.0));
    let (s, ds, dds) = envelope(2.5, 5.0);
    assert!((s - 0.5).abs() < 1e-15);
    assert!(ds > 0.0);
    assert!(dds.abs() < 1e-12);
    let h = 1e-5;
    for &t in &[0.3, 1.7, 4.2] {
        let fd = (envelope(t + h, 5.0).0 - envelope(t - h, 5.0).0) / (2.0 * h);
        assert!((fd - envelope(t, 5.0).1).abs() < 1e-8);
    }
}

#[test]
fn trajectory_is_periodic_after_the_ramp() {
    let model = common::mtm();
    let traj = random_trajectory(&model, &OptimizeConfig::new(0.1, 6), 1, 2).unwrap();
    for &t in &[5.0, 7.3, 12.9] {
        let a = eval_trajectory(&traj, t);
        let b = eval_trajectory(&traj, t + traj.period());
        assert!((a.q - b.q).amax() < 1e-12);
        assert!((a.dq - b.dq).amax() < 1e-12);
        assert!((a.ddq - b.ddq).amax() < 1e-12);
    }
}

#[test]
fn derivatives_match_finite_differences() {
    let model = common::psm();
    let traj = random_trajectory(&model, &OptimizeConfig::new(0.18, 6), 0, 0).unwrap();
    let h = 1e-5;
    for &t in &[0.8, 2.5, 6.0, 9.1, 13.4] {
        let s = eval_trajectory(&traj, t);
        let (p, m) = (eval_trajectory(&traj, t + h), eval_trajectory(&traj, t - h));
        let dq = (&p.q - &m.q) / (2.0 * h);
        let ddq = (&p.dq - &m.dq) / (2.0 * h);
        assert!((dq - &s.dq).norm() <= 1e-6 * s.dq.norm().max(1e-3), "t = {t}");
        assert!((ddq - &s.ddq).norm() <= 1e-6 * s.ddq.norm().max(1e-3), "t = {t}");
    }
}

#[test]
fn trajectory_starts_at_rest_on_its_offsets() {
    let model = common::mtm();
    let traj = random_trajectory(&model, &OptimizeConfig::new(0.1, 6), 0, 1).unwrap();
    let s = eval_trajectory(&traj, 0.0);
    for k in 0..7 {
        assert!((s.q[k] - traj.offsets[k]).abs() < 1e-12);
    }
    assert!(s.dq.amax() < 1e-12);
}

#[test]
fn constant_trajectory_constraints() {
    let model = common::mtm();
    let c = model.coupling();
    let mid: Vec<f64> = (0..7)
        .map(|i| model.limit_for(c.basis_selector[i]).map_or(0.0, |l| 0.5 * (l.q_min + l.q_max)))
        .collect();
    let offsets = c.motor_from_basis(&nalgebra::DVector::from_vec(mid));
    let mut traj = FourierTrajectory::constant(model.motor_names().to_vec(), 0.1, 6, offsets.iter().copied().collect());
    let report = check_constraints(&model, &traj, 200).unwrap();
    assert!(report.is_feasible(), "{:?}", report.worst());

    // a slow, wide swing on the first motor breaks its position limit
    traj.a[0][0] = 1.0;
    let report = check_constraints(&model, &traj, 200).unwrap();
    assert!(!report.is_feasible());
    assert!(report.worst().unwrap().name.contains("q1"));
}

#[test]
fn coarse_constraint_grid_is_rejected() {
    let model = common::mtm();
    let traj = random_trajectory(&model, &OptimizeConfig::new(0.1, 6), 0, 0).unwrap();
    assert!(check_constraints(&model, &traj, 119).is_err());
}

#[test]
fn condition_number_sentinels() {
    let model = common::planar_2r();
    let red = base_reduction(&model, 400, 0).unwrap();
    let still = FourierTrajectory::constant(model.motor_names().to_vec(), 0.2, 3, vec![0.1, 0.2]);
    assert_eq!(condition_objective(&model, &red, &still, 100).unwrap(), f64::INFINITY);
    let cfg = OptimizeConfig::new(0.2, 3);
    for i in 0..5 {
        let traj = random_trajectory(&model, &cfg, 0, i).unwrap();
        assert!(condition_objective(&model, &red, &traj, 100).unwrap() >= 1.0);
    }
    assert_eq!(matrix_condition(&DMatrix::identity(4, 4)), 1.0);
    assert_eq!(matrix_condition(&DMatrix::zeros(4, 2)), f64::INFINITY);
}

#[test]
fn objective_ignores_time_origin_shifts_by_whole_strides() {
    let model = common::planar_2r();
    let red = base_reduction(&model, 400, 0).unwrap();
    let traj = random_trajectory(&model, &OptimizeConfig::new(0.2, 3), 4, 0).unwrap();
    let s = 100;
    let base = condition_objective(&model, &red, &traj, s).unwrap();
    for k in [1, 7, 50, 99] {
        let moved = shifted(&traj, k as f64 * traj.period() / s as f64);
        let c = condition_objective(&model, &red, &moved, s).unwrap();
        assert!((c - base).abs() <= 1e-9 * base, "shift {k}: {c} vs {base}");
    }
}

#[test]
fn mismatched_motors_are_rejected() {
    let model = common::mtm();
    let red = base_reduction(&common::planar_2r(), 100, 0).unwrap();
    let traj = FourierTrajectory::constant(vec!["m1".into(), "m2".into()], 0.1, 2, vec![0.0, 0.0]);
    assert!(condition_objective(&model, &red, &traj, 50).is_err());
    assert!(check_constraints(&model, &traj, 100).is_err());
}

#[test]
fn optimizer_beats_random_trajectories_on_a_toy() {
    let model = toy();
    let red = base_reduction(&model, 300, 0).unwrap();
    let mut cfg = OptimizeConfig::new(0.2, 3);
    cfg.restarts = 4;
    cfg.iterations_per_stage = 40;
    let result = optimize_trajectory(&model, &red, &cfg).unwrap();
    assert!(result.report.is_feasible());
    let mut random = Vec::new();
    let mut index = 0;
    while random.len() < 100 {
        let traj = random_trajectory(&model, &cfg, 1, index).unwrap();
        index += 1;
        if check_constraints(&model, &traj, cfg.check_grid).unwrap().is_feasible() {
            random.push(condition_objective(&model, &red, &traj, cfg.samples_per_period).unwrap());
        }
        assert!(index < 2000, "too few feasible random trajectories");
    }
    let med = median(random);
    assert!(result.condition < med, "optimized {} vs median {med}", result.condition);

    let best: Vec<f64> = result.log.iter().map(|r| r.best).collect();
    assert!(best.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn optimizer_is_deterministic() {
    let model = toy();
    let red = base_reduction(&model, 300, 0).unwrap();
    let mut cfg = OptimizeConfig::new(0.2, 2);
    cfg.restarts = 2;
    cfg.iterations_per_stage = 15;
    cfg.seed = 9;
    let a = optimize_trajectory(&model, &red, &cfg).unwrap();
    let b = optimize_trajectory(&model, &red, &cfg).unwrap();
    assert_eq!(a.trajectory, b.trajectory);
    assert_eq!(a.log, b.log);
}

#[test]
fn invalid_configurations_are_rejected() {
    let model = toy();
    let red = base_reduction(&model, 100, 0).unwrap();
    let mut cfg = OptimizeConfig::new(0.2, 0);
    assert!(optimize_trajectory(&model, &red, &cfg).is_err());
    cfg = OptimizeConfig::new(-1.0, 2);
    assert!(optimize_trajectory(&model, &red, &cfg).is_err());
    cfg = OptimizeConfig::new(0.2, 2);
    cfg.restarts = 0;
    assert!(optimize_trajectory(&model, &red, &cfg).is_err());
}

#[test]
fn trajectory_file_round_trip() {
    let model = common::psm();
    let traj = random_trajectory(&model, &OptimizeConfig::new(0.18, 6), 2, 3).unwrap();
    let back = FourierTrajectory::from_json(&traj.to_json()).unwrap();
    assert_eq!(back, traj);
    let mut bad = traj.clone();
    bad.a[0].pop();
    assert!(FourierTrajectory::from_json(&bad.to_json()).is_err());
}

#[test]
fn shipped_trajectories_are_feasible_and_well_conditioned() {
    for (name, bound) in [("mtm", 1000.0), ("psm", 2000.0)] {
        let model = dynident::shipped_model(name).unwrap();
        let objective = model.for_trajectory_objective().unwrap();
        let red = base_reduction(&objective, 2000, 0).unwrap();
        for purpose in ["identification", "test"] {
            let path = dynident::shipped_dir().join(format!("{name}_{purpose}.traj.json"));
            let traj = FourierTrajectory::load(&path).unwrap();
            assert_eq!(traj.n_h, 6);
            let report = check_constraints(&model, &traj, 1000).unwrap();
            assert!(report.is_feasible(), "{name} {purpose}: {:?}", report.worst());
            let cond = condition_objective(&objective, &red, &traj, 100).unwrap();
            assert!(cond <= bound, "{name} {purpose}: cond {cond}");
        }
    }
}
