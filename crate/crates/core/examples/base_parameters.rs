//! Regressor of the PSM and its base-parameter regrouping.
//!
//! `cargo run --example base_parameters -- psm` prints every base parameter
//! with the standard parameters folded into it.

use dynident::regressor::base_reduction;

fn main() -> dynident::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "psm".into());
    let model = dynident::shipped_model(&name)?;
    let reduction = base_reduction(&model, 2000, 0)?;
    println!(
        "{}: {} standard parameters, {} base parameters",
        model.name(),
        model.parameter_count(),
        reduction.b()
    );
    let layout = model.layout();
    let labels: Vec<String> = (0..layout.len()).map(|i| layout.label(i)).collect();
    print!("{}", reduction.to_csv(&labels));
    Ok(())
}
