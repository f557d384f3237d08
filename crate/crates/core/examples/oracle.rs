//! Compares the Newton-Euler regressor with the energy-based oracle.

use dynident::regressor::full_regressor;
use dynident::regressor::reduction::sample_states;
use dynident::synthbench::{lagrangian_oracle, sample_feasible_parameters};

fn main() -> dynident::Result<()> {
    for name in ["mtm", "psm"] {
        let model = dynident::shipped_model(name)?;
        let delta = sample_feasible_parameters(&model, 0)?.delta_star;
        let mut worst = 0.0f64;
        for s in sample_states(&model, 50, 1) {
            let tau = full_regressor(&model, &s.q, &s.dq, &s.ddq)?.torque(&delta);
            let oracle = lagrangian_oracle(&model, &delta, &s.q, &s.dq, &s.ddq);
            for k in 0..tau.len() {
                worst = worst.max((tau[k] - oracle[k]).abs() / (1.0 + oracle[k].abs()));
            }
        }
        println!("{}: max relative discrepancy {worst:.2e}", model.name());
    }
    Ok(())
}
