//! Optimizes a short PSM excitation trajectory and compares it with random ones.
//!
//! Uses fewer restarts and iterations than `dynident traj optimize` so it
//! finishes in well under a minute.

use dynident::excitation::{check_constraints, condition_objective, optimize_trajectory, random_trajectory, OptimizeConfig};
use dynident::regressor::base_reduction;

fn main() -> dynident::Result<()> {
    let model = dynident::shipped_model("psm")?;
    let objective = model.for_trajectory_objective()?;
    let reduction = base_reduction(&objective, 1000, 0)?;
    let mut config = OptimizeConfig::new(0.18, 4);
    config.restarts = 2;
    config.iterations_per_stage = 30;

    let result = optimize_trajectory(&objective, &reduction, &config)?;
    println!("optimized cond(W_b) = {:.1}", result.condition);
    println!("minimum constraint margin = {:.4}", result.report.min_margin());

    for index in 0..5 {
        let traj = random_trajectory(&model, &config, 1, index)?;
        let feasible = check_constraints(&model, &traj, config.check_grid)?.is_feasible();
        let cond = condition_objective(&objective, &reduction, &traj, config.samples_per_period)?;
        println!("random #{index}: cond {cond:.1} feasible {feasible}");
    }
    Ok(())
}
