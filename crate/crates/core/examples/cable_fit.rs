//! Fits a cable torque polynomial from two constant-velocity sweeps.

use dynident::identification::fit_cable_polynomial;
use dynident::regressor::polyval;

fn main() -> dynident::Result<()> {
    let truth = [0.02, -0.011, 0.004, 0.0009];
    let q: Vec<f64> = (0..300).map(|i| -2.0 + 4.0 * i as f64 / 299.0).collect();
    // Coulomb plus viscous friction flips sign with the sweep direction
    let friction = 0.15 + 0.02 * 0.3;
    let up: Vec<f64> = q.iter().map(|&x| polyval(&truth, x) + friction).collect();
    let down: Vec<f64> = q.iter().map(|&x| polyval(&truth, x) - friction).collect();
    let fit = fit_cable_polynomial(&q, &up, &down, 3)?;
    for (k, (f, t)) in fit.iter().zip(&truth).enumerate() {
        println!("f{k}: fitted {f:+.6e}, true {t:+.6e}");
    }
    Ok(())
}
