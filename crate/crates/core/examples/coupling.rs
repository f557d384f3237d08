//! Motor, dVRK and complete coordinates of the shipped MTM.

use dynident::model::validate_coupling;
use nalgebra::DVector;

fn main() -> dynident::Result<()> {
    let model = dynident::shipped_model("mtm")?;
    let c = model.coupling();
    let report = validate_coupling(&model)?;
    println!("A^d_m (cond {:.3}):\n{:.4}", report.dvrk_condition, c.dvrk_matrix());

    let q_m = DVector::from_row_slice(&[0.1, -0.2, 0.4, 0.3, 0.0, 0.5, 1.0]);
    let q_c = c.complete(&q_m);
    for (name, v) in c.coordinate_names.iter().zip(q_c.iter()) {
        println!("{name:>8} = {v:+.5}");
    }
    Ok(())
}
