//! Full synthetic loop on the MTM: simulate, identify, validate.

use dynident::identification::{
    relative_prediction_error, relative_prediction_error_base, solve_feasible, solve_ols_base, stack_problem,
};
use dynident::regressor::{base_reduction, ParamKind};
use dynident::signals::{process_log, ProcessOptions};
use dynident::synthbench::{sample_feasible_parameters, simulate_log};
use dynident::FourierTrajectory;

fn main() -> dynident::Result<()> {
    let noise: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.02);
    let model = dynident::shipped_model("mtm")?;
    let dir = dynident::shipped_dir();
    let id_traj = FourierTrajectory::load(dir.join("mtm_identification.traj.json"))?;
    let test_traj = FourierTrajectory::load(dir.join("mtm_test.traj.json"))?;

    let truth = sample_feasible_parameters(&model, 0)?.with_noise(noise);
    let mut test_truth = truth.clone();
    test_truth.seed = 1;
    let options = ProcessOptions::with_cutoff(1.8);
    let id_log = process_log(&simulate_log(&model, &truth, &id_traj, 200.0, id_traj.duration + 5.0)?, &options)?;
    let test_log = process_log(&simulate_log(&model, &test_truth, &test_traj, 200.0, test_traj.duration + 5.0)?, &options)?;

    let mut problem = stack_problem(&model, &[id_log])?;
    let reduction = base_reduction(&model, 2000, 0)?;
    let ols = solve_ols_base(&problem, &reduction)?;

    // masses of links near the base barely move the torques; cap them at 10 kg
    let layout = model.layout().clone();
    for j in layout.links() {
        let m = layout.index_of(j, ParamKind::Mass).unwrap();
        problem = problem.with_bound(m, 0.0, 10.0)?;
    }
    let feasible = solve_feasible(&problem, &model)?;
    println!("residual: OLS {:.4e}, feasible {:.4e}", ols.residual, feasible.residual);
    println!("minimum feasibility margin {:.3e}", feasible.min_margin());

    let e_ols = relative_prediction_error_base(&model, &reduction.independent, &ols.delta_b, &test_log)?;
    let e_feas = relative_prediction_error(&model, &feasible.delta, &test_log)?;
    println!("{:<6} {:>8} {:>9}", "motor", "OLS %", "feasible %");
    for (k, name) in model.motor_names().iter().enumerate() {
        println!("{name:<6} {:>8.3} {:>9.3}", e_ols.per_joint[k], e_feas.per_joint[k]);
    }
    println!("{:<6} {:>8.3} {:>9.3}", "all", e_ols.overall, e_feas.overall);

    for link in &feasible.standard {
        if let Some(s) = &link.standard {
            println!("link {:<5} m = {:.4} kg, r = [{:+.4}, {:+.4}, {:+.4}]", link.joint, s.mass, s.com.x, s.com.y, s.com.z);
        }
    }
    Ok(())
}
