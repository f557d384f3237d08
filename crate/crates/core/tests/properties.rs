mod common;

use std::f64::consts::PI;
use std::sync::LazyLock;

use dynident::excitation::{eval_trajectory, random_trajectory, OptimizeConfig};
use dynident::identification::solve_ols_base;
use dynident::kinematics::{expand_coordinates, frame_positions, local_transform};
use dynident::model::JointKind;
use dynident::regressor::reduction::sample_states;
use dynident::regressor::{base_reduction, full_regressor, stack_regressor, BarycentricInertia, StandardInertia};
use dynident::signals::{butterworth_zero_phase, differentiate};
use dynident::{BaseReduction, IdentificationProblem, ParameterVector, RobotModel};
use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};
use proptest::prelude::*;

static MTM: LazyLock<RobotModel> = LazyLock::new(common::mtm);
static PSM: LazyLock<RobotModel> = LazyLock::new(common::psm);
static MTM_RED: LazyLock<BaseReduction> = LazyLock::new(|| base_reduction(&MTM, 2000, 0).unwrap());
static PSM_RED: LazyLock<BaseReduction> = LazyLock::new(|| base_reduction(&PSM, 2000, 0).unwrap());

fn model(psm: bool) -> &'static RobotModel {
    if psm {
        &PSM
    } else {
        &MTM
    }
}

fn vec7() -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-2.0..2.0f64, 7).prop_map(DVector::from_vec)
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coupling_blocks_invert(psm in any::<bool>(), q in vec7()) {
        let a = model(psm).coupling().dvrk_matrix();
        let back = a.clone().lu().solve(&(&a * &q)).unwrap();
        prop_assert!((back - &q).amax() <= 1e-12 * (1.0 + q.amax()));
    }

    #[test]
    fn pose_composed_with_inverse_is_identity(psm in any::<bool>(), q in vec7()) {
        let m = model(psm);
        let q_c = m.coupling().complete(&q);
        for pose in frame_positions(m, &q_c) {
            let r = pose.rotation;
            prop_assert!((r.transpose() * r - Matrix3::identity()).amax() <= 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() <= 1e-12);
            let id = pose.compose(&pose.inverse());
            prop_assert!((id.rotation - Matrix3::identity()).amax() <= 1e-12);
            prop_assert!(id.translation.amax() <= 1e-12 * (1.0 + pose.translation.amax()));
        }
    }

    #[test]
    fn whole_turns_of_revolute_coordinates_leave_frames_unchanged(
        psm in any::<bool>(), q in vec7(), pick in 0usize..64, turns in -3i32..=3,
    ) {
        let m = model(psm);
        let q_c = m.coupling().complete(&q);
        // coordinates that only ever enter revolute joints with integer gain
        let eligible: Vec<usize> = (0..q_c.len())
            .filter(|&c| {
                m.joints().iter().all(|j| {
                    let g = j.complete_row[c];
                    g == 0.0 || (j.kind == JointKind::Revolute && g.fract() == 0.0)
                })
            })
            .collect();
        prop_assume!(!eligible.is_empty());
        let c = eligible[pick % eligible.len()];
        let mut moved = q_c.clone();
        moved[c] += 2.0 * PI * turns as f64;
        for (a, b) in frame_positions(m, &q_c).iter().zip(frame_positions(m, &moved)) {
            prop_assert!((a.rotation - b.rotation).amax() <= 1e-12);
            prop_assert!((a.translation - b.translation).amax() <= 1e-12);
        }
    }

    #[test]
    fn coordinate_expansion_is_affine(
        psm in any::<bool>(), x in vec7(), y in vec7(), alpha in -3.0..3.0f64, beta in -3.0..3.0f64,
    ) {
        let m = model(psm);
        let e0 = &m.coupling().e0;
        let z = DVector::zeros(7);
        let sx = expand_coordinates(m, &x, &x, &x).unwrap();
        let sy = expand_coordinates(m, &y, &y, &y).unwrap();
        let comb = &x * alpha + &y * beta;
        let s = expand_coordinates(m, &comb, &comb, &comb).unwrap();
        let expect = &sx.q_c * alpha + &sy.q_c * beta - e0 * (alpha + beta - 1.0);
        prop_assert!((s.q_c - expect).amax() <= 1e-12 * 20.0);
        prop_assert!((s.dq_c - (&sx.dq_c * alpha + &sy.dq_c * beta)).amax() <= 1e-12 * 20.0);
        prop_assert!((s.ddq_c - (&sx.ddq_c * alpha + &sy.ddq_c * beta)).amax() <= 1e-12 * 20.0);
        let zero = expand_coordinates(m, &z, &z, &z).unwrap();
        prop_assert_eq!(zero.q_c, e0.clone());
    }

    #[test]
    fn local_transforms_are_rigid(psm in any::<bool>(), joint in 0usize..16, v in -7.0..7.0f64) {
        let m = model(psm);
        let j = joint % m.joints().len();
        let t = local_transform(m, j, v);
        prop_assert!((t.rotation.transpose() * t.rotation - Matrix3::identity()).amax() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn regressor_is_linear_in_the_parameters(
        psm in any::<bool>(), q in vec7(), dq in vec7(), ddq in vec7(),
        seed_a in any::<u64>(), seed_b in any::<u64>(), alpha in -2.0..2.0f64,
    ) {
        let m = model(psm);
        let n = m.parameter_count();
        let rand = |seed: u64| {
            let mut x = seed;
            DVector::from_fn(n, |_, _| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
        };
        let pv = |v: DVector<f64>| ParameterVector::from_values(m.layout().clone(), v).unwrap();
        let (a, b) = (rand(seed_a), rand(seed_b));
        let h = full_regressor(m, &q, &dq, &ddq).unwrap();
        let lhs = h.torque(&pv(&a * alpha + &b));
        let rhs = h.torque(&pv(a)) * alpha + h.torque(&pv(b));
        for k in 0..7 {
            prop_assert!(rel_close(lhs[k], rhs[k], 1e-12), "{} vs {}", lhs[k], rhs[k]);
        }
    }

    #[test]
    fn base_parameters_reproduce_the_full_torque(psm in any::<bool>(), seed in 1000u64..1_000_000, scale in 0.1..10.0f64) {
        let m = model(psm);
        let red: &BaseReduction = if psm { &PSM_RED } else { &MTM_RED };
        let w = stack_regressor(m, &sample_states(m, 5, seed)).unwrap();
        let delta = DVector::from_fn(m.parameter_count(), |i, _| scale * ((i as f64 + seed as f64) * 0.731).sin());
        let full = &w * &delta;
        let base = red.select(&w) * red.base_parameters(&delta);
        prop_assert!((&full - base).norm() <= 1e-8 * full.norm());
    }

    #[test]
    fn trajectory_derivatives_match_finite_differences(
        psm in any::<bool>(), seed in any::<u64>(), t in 5.0..25.0f64,
    ) {
        let m = model(psm);
        let traj = random_trajectory(m, &OptimizeConfig::new(0.1, 6), seed, 0).unwrap();
        let h = 1e-5;
        let s = eval_trajectory(&traj, t);
        let (p, n) = (eval_trajectory(&traj, t + h), eval_trajectory(&traj, t - h));
        let dq = (&p.q - &n.q) / (2.0 * h);
        let ddq = (&p.dq - &n.dq) / (2.0 * h);
        prop_assert!((dq - &s.dq).norm() <= 1e-6 * s.dq.norm().max(1e-3));
        prop_assert!((ddq - &s.ddq).norm() <= 1e-6 * s.ddq.norm().max(1e-3));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn zero_phase_filter_commutes_with_reversal(
        x in prop::collection::vec(-5.0..5.0f64, 40..600), cutoff in 0.5..40.0f64, order in 1usize..=8,
    ) {
        let fs = 200.0;
        let y = butterworth_zero_phase(&x, fs, cutoff, order).unwrap();
        let mut r = x.clone();
        r.reverse();
        let mut yr = butterworth_zero_phase(&r, fs, cutoff, order).unwrap();
        yr.reverse();
        let scale = x.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for (a, b) in y.iter().zip(&yr) {
            prop_assert!((a - b).abs() <= 1e-9 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn differentiating_a_trapezoid_integral_recovers_the_signal(
        amp in 0.1..3.0f64, freq in 0.05..2.0f64, phase in -3.0..3.0f64,
    ) {
        let fs = 200.0;
        let h = 1.0 / fs;
        let n = 800;
        let w = 2.0 * PI * freq;
        let f: Vec<f64> = (0..n).map(|i| amp * (w * i as f64 * h + phase).sin()).collect();
        let mut integral = vec![0.0; n];
        for i in 1..n {
            integral[i] = integral[i - 1] + 0.5 * h * (f[i - 1] + f[i]);
        }
        let d = differentiate(&integral, fs).unwrap();
        // central difference of the trapezoid sum is exact up to O(h²·f'')
        let bound = amp * w * w * h * h;
        for i in 1..n - 1 {
            prop_assert!((d[i] - f[i]).abs() <= bound, "{i}: {} vs {}", d[i], f[i]);
        }
    }

    #[test]
    fn rescaling_a_channel_with_its_weight_leaves_ols_unchanged(
        seed in any::<u64>(), channel in 0usize..3, c in 0.05..20.0f64,
    ) {
        let (rows, cols, n_m) = (45, 5, 3);
        let mut x = seed;
        let mut next = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let w = DMatrix::from_fn(rows, cols, |_, _| next());
        let omega = DVector::from_fn(rows, |_, _| next());
        let weights = DVector::from_fn(n_m, |k, _| 1.0 + k as f64);
        let red = BaseReduction::from_stacked(&w);
        prop_assume!(red.b() == cols);
        let base = solve_ols_base(&IdentificationProblem::new(w.clone(), omega.clone(), weights.clone()).unwrap(), &red).unwrap();
        let (mut w2, mut o2, mut wt2) = (w, omega, weights);
        for r in (channel..rows).step_by(n_m) {
            w2.row_mut(r).scale_mut(c);
            o2[r] *= c;
        }
        wt2[channel] /= c;
        let scaled = solve_ols_base(&IdentificationProblem::new(w2, o2, wt2).unwrap(), &red).unwrap();
        prop_assert!((&base.delta_b - &scaled.delta_b).amax() <= 1e-9 * (1.0 + base.delta_b.amax()));
    }

    #[test]
    fn standard_barycentric_round_trip(
        mass in 0.05..10.0f64,
        com in prop::array::uniform3(-0.3..0.3f64),
        eig in prop::array::uniform3(1e-4..0.1f64),
        axis in prop::array::uniform3(-1.0..1.0f64),
        angle in -PI..PI,
    ) {
        // principal moments of a physical body obey the triangle inequality
        let (a, b, c) = (eig[0], eig[1], eig[2]);
        prop_assume!(a + b >= c && b + c >= a && a + c >= b);
        let v = Vector3::from(axis);
        prop_assume!(v.norm() > 1e-3);
        let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(v), angle).into_inner();
        let s = StandardInertia {
            mass,
            com: Vector3::from(com),
            inertia_com: r * Matrix3::from_diagonal(&Vector3::new(a, b, c)) * r.transpose(),
        };
        let bary = BarycentricInertia::from_standard(&s);
        let back = bary.to_standard(1e-6).unwrap();
        prop_assert!((back.mass - s.mass).abs() <= 1e-12 * s.mass);
        prop_assert!((back.com - s.com).amax() <= 1e-12);
        prop_assert!((back.inertia_com - s.inertia_com).amax() <= 1e-12);
        let again = BarycentricInertia::from_standard(&back);
        prop_assert!((again.inertia - bary.inertia).amax() <= 1e-12);
        prop_assert!((again.first_moment - bary.first_moment).amax() <= 1e-12);
    }
}
