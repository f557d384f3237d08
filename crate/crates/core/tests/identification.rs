mod common;

use dynident::excitation::{eval_trajectory, random_trajectory, OptimizeConfig};
use dynident::identification::{
    feasibility_margins, fit_cable_polynomial, recover_standard, relative_prediction_error, solve_feasible,
    solve_ols_base, stack_problem, ParameterFile, LMI_EPSILON,
};
use dynident::regressor::reduction::sample_states;
use dynident::regressor::{base_reduction, BarycentricInertia, ParamKind, StandardInertia};
use dynident::signals::{process_log, DroppedStates, ProcessOptions, ProcessedLog};
use dynident::synthbench::{sample_feasible_parameters, simulate_log};
use dynident::{
    BaseReduction, Error, FourierTrajectory, GroundTruth, IdentificationProblem, JointLog, ParameterVector, RobotModel,
};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

fn empty_states(n_m: usize) -> DroppedStates {
    DroppedStates {
        q: DMatrix::zeros(0, n_m),
        dq: DMatrix::zeros(0, n_m),
        ddq: DMatrix::zeros(0, n_m),
    }
}

/// Noiseless log with analytic accelerations and nothing dropped.
fn exact_log(model: &RobotModel, delta: &ParameterVector, traj: &FourierTrajectory, fs: f64) -> ProcessedLog {
    let truth = GroundTruth {
        delta_star: delta.clone(),
        seed: 0,
        noise_sigma_fraction: 0.0,
    };
    let log = simulate_log(model, &truth, traj, fs, traj.duration).unwrap();
    let n_m = model.motor_count();
    let ddq = DMatrix::from_fn(log.len(), n_m, |i, k| eval_trajectory(traj, log.t[i]).ddq[k]);
    ProcessedLog {
        log,
        ddq,
        filter: None,
        lead_in: empty_states(n_m),
        lead_out: empty_states(n_m),
    }
}

fn psm_setup() -> (RobotModel, ParameterVector, FourierTrajectory) {
    let model = common::psm();
    let delta = sample_feasible_parameters(&model, 1).unwrap().delta_star;
    let traj = random_trajectory(&model, &OptimizeConfig::new(0.18, 6), 5, 0).unwrap();
    (model, delta, traj)
}

/// Friction-only joint swept back and forth.
fn friction_problem(fv: f64, fc: f64, fo: f64, noise: f64) -> (RobotModel, IdentificationProblem) {
    let model = common::friction_only();
    let n = 400;
    let t: Vec<f64> = (0..n).map(|i| i as f64 / 100.0).collect();
    let q = DMatrix::from_fn(n, 1, |i, _| 0.5 * (t[i]).sin());
    let dq = DMatrix::from_fn(n, 1, |i, _| 0.5 * (t[i]).cos());
    let tau = DMatrix::from_fn(n, 1, |i, _| {
        let v = dq[(i, 0)];
        fv * v + fc * v.signum() + fo + noise * ((i * 7919 % 101) as f64 / 50.0 - 1.0)
    });
    let log = JointLog::new(t, q, dq, tau).unwrap();
    let opts = ProcessOptions {
        ramp_duration: 0.0,
        ..ProcessOptions::default()
    };
    let p = process_log(&log, &opts).unwrap();
    let problem = stack_problem(&model, &[p]).unwrap();
    (model, problem)
}

#[test]
fn noiseless_rows_reproduce_the_torques() {
    let (model, delta, traj) = psm_setup();
    let log = exact_log(&model, &delta, &traj, 20.0);
    let problem = stack_problem(&model, &[log]).unwrap();
    let err = (&problem.w * &delta.values - &problem.omega).norm();
    assert!(err <= 1e-10 * problem.omega.norm(), "{err}");
    assert_eq!(problem.sample_count() * 7, problem.w.nrows());
}

#[test]
fn ols_recovers_base_parameters_from_exact_data() {
    let (model, delta, traj) = psm_setup();
    let red = base_reduction(&model, 2000, 0).unwrap();
    let problem = stack_problem(&model, &[exact_log(&model, &delta, &traj, 20.0)]).unwrap();
    let est = solve_ols_base(&problem, &red).unwrap();
    let truth = red.base_parameters(&delta.values);
    assert!(common::rel(&est.delta_b, &truth) < 1e-6, "{}", common::rel(&est.delta_b, &truth));
    assert!(est.residual < 1e-12 * problem.weighted().1.norm_squared());
}

#[test]
fn feasible_solve_on_exact_data_predicts_held_out_torques() {
    let (model, delta, traj) = psm_setup();
    let problem = stack_problem(&model, &[exact_log(&model, &delta, &traj, 20.0)]).unwrap();
    let sol = solve_feasible(&problem, &model).unwrap();
    assert!(sol.min_margin() >= -LMI_EPSILON, "{}", sol.min_margin());
    let other = random_trajectory(&model, &OptimizeConfig::new(0.18, 6), 6, 0).unwrap();
    let err = relative_prediction_error(&model, &sol.delta, &exact_log(&model, &delta, &other, 20.0)).unwrap();
    assert!(err.overall <= 0.1, "{}", err.overall);
}

#[test]
fn constrained_residual_dominates_unconstrained() {
    let (model, delta, traj) = psm_setup();
    let mut log = exact_log(&model, &delta, &traj, 20.0);
    for (i, v) in log.log.tau.iter_mut().enumerate() {
        *v += 0.05 * ((i * 2654435761usize % 1000) as f64 / 500.0 - 1.0);
    }
    let problem = stack_problem(&model, &[log]).unwrap();
    let red = base_reduction(&model, 2000, 0).unwrap();
    let ols = solve_ols_base(&problem, &red).unwrap();
    let feas = solve_feasible(&problem, &model).unwrap();
    assert!(feas.residual >= ols.residual * (1.0 - 1e-9), "{} < {}", feas.residual, ols.residual);
    assert!(feas.min_margin() >= -LMI_EPSILON);
}

#[test]
fn infeasible_friction_is_projected_onto_the_boundary() {
    let (model, problem) = friction_problem(0.3, -0.2, 0.1, 0.0);
    let sol = solve_feasible(&problem, &model).unwrap();
    let fc = sol.delta.get(0, ParamKind::Fc).unwrap();
    assert!(fc >= -LMI_EPSILON && fc < 1e-5, "F_c = {fc}");
    assert!(sol.min_margin() >= -LMI_EPSILON);
    let red = base_reduction(&model, 100, 0).unwrap();
    let ols = solve_ols_base(&problem, &red).unwrap();
    assert!((ols.delta_b[1] + 0.2).abs() < 1e-9);
    assert!(sol.residual >= ols.residual);
}

#[test]
fn torque_range_sets_the_weight() {
    let (_, problem) = friction_problem(0.0, 2.0, 0.0, 0.0);
    assert!((problem.weights[0] - 0.25).abs() < 1e-15);
}

#[test]
fn constant_channel_is_rejected() {
    let model = common::friction_only();
    let n = 50;
    let t: Vec<f64> = (0..n).map(|i| i as f64 / 100.0).collect();
    let m = DMatrix::from_fn(n, 1, |i, _| i as f64 * 0.01);
    let log = JointLog::new(t, m.clone(), m, DMatrix::from_element(n, 1, 1.5)).unwrap();
    let opts = ProcessOptions {
        ramp_duration: 0.0,
        ..ProcessOptions::default()
    };
    let p = process_log(&log, &opts).unwrap();
    assert!(matches!(stack_problem(&model, &[p]), Err(Error::ZeroRange(m)) if m == "m1"));
}

#[test]
fn identity_regressor_returns_the_measurements() {
    let w = DMatrix::identity(4, 4);
    let omega = DVector::from_row_slice(&[1.0, -2.0, 0.5, 3.0]);
    let problem = IdentificationProblem::new(w.clone(), omega.clone(), DVector::from_row_slice(&[0.5, 4.0])).unwrap();
    let est = solve_ols_base(&problem, &BaseReduction::from_stacked(&w)).unwrap();
    assert!((est.delta_b - omega).amax() < 1e-14);
    assert!(est.residual < 1e-28);
}

fn random_problem(rows: usize, cols: usize, n_m: usize) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let w = DMatrix::from_fn(rows, cols, |r, c| ((r * 31 + c * 17) as f64 * 0.37).sin() + if r % cols == c { 1.0 } else { 0.0 });
    let omega = DVector::from_fn(rows, |r, _| ((r * 13) as f64 * 0.11).cos());
    let weights = DVector::from_fn(n_m, |k, _| 1.0 + k as f64);
    (w, omega, weights)
}

#[test]
fn duplicated_samples_leave_the_estimate_unchanged() {
    let (w, omega, weights) = random_problem(30, 4, 3);
    let red = BaseReduction::from_stacked(&w);
    let once = solve_ols_base(&IdentificationProblem::new(w.clone(), omega.clone(), weights.clone()).unwrap(), &red).unwrap();
    let w2 = DMatrix::from_fn(60, 4, |r, c| w[(r % 30, c)]);
    let o2 = DVector::from_fn(60, |r, _| omega[r % 30]);
    let twice = solve_ols_base(&IdentificationProblem::new(w2, o2, weights).unwrap(), &red).unwrap();
    assert!((once.delta_b - twice.delta_b).amax() < 1e-10);
    assert!((twice.residual - 2.0 * once.residual).abs() < 1e-10);
}

#[test]
fn rescaling_a_channel_with_its_weight_is_invisible() {
    let (w, omega, weights) = random_problem(30, 4, 3);
    let red = BaseReduction::from_stacked(&w);
    let base = solve_ols_base(&IdentificationProblem::new(w.clone(), omega.clone(), weights.clone()).unwrap(), &red).unwrap();
    let (mut w2, mut o2, mut wt2) = (w, omega, weights);
    let c = 7.5;
    for r in (1..30).step_by(3) {
        w2.row_mut(r).scale_mut(c);
        o2[r] *= c;
    }
    wt2[1] /= c;
    let scaled = solve_ols_base(&IdentificationProblem::new(w2, o2, wt2).unwrap(), &red).unwrap();
    assert!((base.delta_b - scaled.delta_b).amax() < 1e-10);
}

#[test]
fn degenerate_problems_are_rejected() {
    let empty = IdentificationProblem::new(DMatrix::zeros(0, 3), DVector::zeros(0), DVector::from_element(1, 1.0));
    match empty {
        Ok(p) => {
            let red = BaseReduction::from_stacked(&DMatrix::identity(3, 3));
            assert!(solve_ols_base(&p, &red).is_err());
        }
        Err(e) => assert!(e.is_usage()),
    }
    let model = common::friction_only();
    let p = IdentificationProblem::new(DMatrix::zeros(0, 3), DVector::zeros(0), DVector::from_element(1, 1.0));
    if let Ok(p) = p {
        assert!(solve_feasible(&p, &model).is_err());
    }
    assert!(IdentificationProblem::new(DMatrix::zeros(4, 3), DVector::zeros(3), DVector::from_element(1, 1.0)).is_err());
    assert!(IdentificationProblem::new(DMatrix::zeros(4, 3), DVector::zeros(4), DVector::from_element(1, 0.0)).is_err());
    let (_, problem) = friction_problem(0.3, 0.2, 0.0, 0.0);
    assert!(problem.clone().with_bound(0, 1.0, 0.0).is_err());
    assert!(problem.with_bound(9, 0.0, 1.0).is_err());
}

#[test]
fn rank_deficient_base_regressor_is_reported() {
    let w = DMatrix::from_fn(6, 2, |r, _| r as f64 + 1.0);
    let problem = IdentificationProblem::new(w, DVector::from_element(6, 1.0), DVector::from_element(1, 1.0)).unwrap();
    let red = BaseReduction {
        independent: vec![0, 1],
        dependent: vec![],
        k_d: DMatrix::zeros(2, 0),
        parameter_count: 2,
    };
    assert!(matches!(solve_ols_base(&problem, &red), Err(Error::RankDeficient { .. })));
}

#[test]
fn contradictory_bounds_are_infeasible() {
    let (model, problem) = friction_problem(0.3, 0.2, 0.0, 0.0);
    // F_v forced negative while the physical constraint keeps it non-negative
    let bounded = problem.with_bound(0, -2.0, -1.0).unwrap();
    assert!(matches!(solve_feasible(&bounded, &model), Err(Error::Infeasible(_))));
}

#[test]
fn bounds_are_respected() {
    let (model, problem) = friction_problem(0.3, 0.2, 0.1, 0.0);
    let sol = solve_feasible(&problem.with_bound(0, 0.0, 0.1).unwrap(), &model).unwrap();
    assert!(sol.delta.values[0] <= 0.1 + 1e-9);
    assert!(sol.delta.values[0] > 0.09);
}

#[test]
fn point_mass_parallel_axis() {
    let s = StandardInertia {
        mass: 1.0,
        com: Vector3::new(1.0, 0.0, 0.0),
        inertia_com: Matrix3::zeros(),
    };
    let b = BarycentricInertia::from_standard(&s);
    assert_eq!(b.inertia, Matrix3::from_diagonal(&Vector3::new(0.0, 1.0, 1.0)));
    let back = b.to_standard(1e-6).unwrap();
    assert!((back.com - s.com).amax() < 1e-15);
    assert!(back.inertia_com.amax() < 1e-15);

    let centred = BarycentricInertia {
        mass: 2.0,
        first_moment: Vector3::zeros(),
        inertia: Matrix3::from_diagonal(&Vector3::new(0.1, 0.2, 0.25)),
    };
    let st = centred.to_standard(1e-6).unwrap();
    assert_eq!(st.com, Vector3::zeros());
    assert_eq!(st.inertia_com, centred.inertia);

    let light = BarycentricInertia { mass: 1e-9, ..centred };
    assert!(light.to_standard(1e-6).is_none());
}

#[test]
fn recovery_round_trip_on_sampled_links() {
    let model = common::mtm();
    for seed in 0..10 {
        let delta = sample_feasible_parameters(&model, seed).unwrap().delta_star;
        for link in recover_standard(&model, &delta) {
            let s = link.standard.unwrap();
            let j = model.joint_index(&link.joint).unwrap();
            let again = BarycentricInertia::from_standard(&s);
            let orig = delta.inertial(j).unwrap();
            assert!((again.inertia - orig.inertia).amax() < 1e-12);
            assert!((again.first_moment - orig.first_moment).amax() < 1e-12);
        }
    }
}

#[test]
fn recovered_inertias_satisfy_the_triangle_inequality() {
    let (model, delta, traj) = psm_setup();
    let mut log = exact_log(&model, &delta, &traj, 20.0);
    for (i, v) in log.log.tau.iter_mut().enumerate() {
        *v += 0.1 * ((i * 40503 % 997) as f64 / 498.5 - 1.0);
    }
    let sol = solve_feasible(&stack_problem(&model, &[log]).unwrap(), &model).unwrap();
    for link in &sol.standard {
        let Some(s) = link.standard else { continue };
        let e = s.inertia_com.symmetric_eigenvalues();
        for (a, b, c) in [(0, 1, 2), (1, 2, 0), (0, 2, 1)] {
            assert!(e[a] + e[b] >= e[c] - 1e-9, "{}: {e:?}", link.joint);
        }
    }
}

#[test]
fn margins_flag_infeasible_parameters() {
    let model = common::mtm();
    let mut delta = sample_feasible_parameters(&model, 2).unwrap().delta_star;
    assert!(feasibility_margins(&model, &delta).iter().all(|m| m.value > 0.0));
    let j = model.joint_index("2").unwrap();
    delta.set(j, ParamKind::Fc, -0.1);
    delta.set(j, ParamKind::Mass, -1.0);
    let bad: Vec<String> = feasibility_margins(&model, &delta)
        .into_iter()
        .filter(|m| m.value < 0.0)
        .map(|m| m.name)
        .collect();
    assert!(bad.iter().any(|n| n == "pseudo-inertia 2"), "{bad:?}");
    assert!(bad.iter().any(|n| n.contains("F_c")), "{bad:?}");
}

#[test]
fn cable_fit_cancels_friction_and_recovers_the_polynomial() {
    let f = [0.012, -0.008, 0.004, 0.0015, -0.0006, 0.0001, -0.00002, 0.000002];
    let q: Vec<f64> = (0..200).map(|i| -1.0 + 3.0 * i as f64 / 199.0).collect();
    let poly = |x: f64| f.iter().rev().fold(0.0, |acc, c| acc * x + c);
    let plus: Vec<f64> = q.iter().map(|&x| poly(x) + 0.3).collect();
    let minus: Vec<f64> = q.iter().map(|&x| poly(x) - 0.3).collect();
    let fit = fit_cable_polynomial(&q, &plus, &minus, 7).unwrap();
    for (a, b) in fit.iter().zip(&f) {
        assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }
    let zero = fit_cable_polynomial(&q, &vec![0.7; 200], &vec![-0.7; 200], 7).unwrap();
    assert!(zero.iter().all(|c| c.abs() < 1e-12));
    assert!(fit_cable_polynomial(&q[..3], &plus[..3], &minus[..3], 7).is_err());
    assert!(fit_cable_polynomial(&q, &plus[..10], &minus, 7).is_err());
}

#[test]
fn prediction_error_extremes() {
    let (model, delta, traj) = psm_setup();
    let log = exact_log(&model, &delta, &traj, 20.0);
    let exact = relative_prediction_error(&model, &delta, &log).unwrap();
    assert!(exact.overall < 1e-8);
    assert!(exact.per_joint.iter().all(|e| *e < 1e-8));
    let zero = relative_prediction_error(&model, &ParameterVector::zeros(model.layout().clone()), &log).unwrap();
    assert!((zero.overall - 100.0).abs() < 1e-12);
    let csv = exact.to_csv();
    assert!(csv.starts_with("t,measured1,"));
    assert_eq!(csv.lines().count(), log.len() + 1);
}

#[test]
fn parameter_files_round_trip() {
    let (model, problem) = friction_problem(0.3, 0.2, 0.1, 0.01);
    let sol = solve_feasible(&problem, &model).unwrap();
    let file = ParameterFile::from_feasible(&model, &sol, problem.sample_count());
    let back = ParameterFile::from_json(&file.to_json()).unwrap();
    assert_eq!(back.delta(&model).unwrap().unwrap(), sol.delta);
    assert!(!back.feasibility_margins.unwrap().is_empty());

    let red = base_reduction(&model, 100, 0).unwrap();
    let est = solve_ols_base(&problem, &red).unwrap();
    let base = ParameterFile::from_base(&model, &red, &est, problem.sample_count());
    let back = ParameterFile::from_json(&base.to_json()).unwrap();
    assert!(back.delta(&model).unwrap().is_none());
    assert!(back.feasibility_margins.is_none());
    let (cols, values) = back.base(&model).unwrap().unwrap();
    assert_eq!(cols, red.independent);
    assert!((values - est.delta_b).amax() < 1e-15);
}

#[test]
fn stacking_appends_logs_in_order() {
    let model = common::planar_2r();
    let states = sample_states(&model, 5, 0);
    let n = 40;
    let t: Vec<f64> = (0..n).map(|i| i as f64 / 100.0).collect();
    let q = DMatrix::from_fn(n, 2, |i, k| states[i % 5].q[k]);
    let dq = DMatrix::from_fn(n, 2, |i, k| 0.1 * (i as f64 + k as f64));
    let tau = DMatrix::from_fn(n, 2, |i, k| (i * (k + 1)) as f64);
    let opts = ProcessOptions {
        ramp_duration: 0.0,
        ..ProcessOptions::default()
    };
    let a = process_log(&JointLog::new(t.clone(), q.clone(), dq.clone(), tau.clone()).unwrap(), &opts).unwrap();
    let single = stack_problem(&model, &[a.clone()]).unwrap();
    let double = stack_problem(&model, &[a.clone(), a]).unwrap();
    assert_eq!(double.w.rows(0, single.w.nrows()), single.w.rows(0, single.w.nrows()));
    assert_eq!(double.w.rows(single.w.nrows(), single.w.nrows()), single.w.rows(0, single.w.nrows()));
}
