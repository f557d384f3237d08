//! Filters a noisy simulated MTM log and differentiates its velocities.

use dynident::excitation::eval_trajectory;
use dynident::signals::{process_log, ProcessOptions};
use dynident::synthbench::{sample_feasible_parameters, simulate_log};
use dynident::FourierTrajectory;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

fn main() -> dynident::Result<()> {
    let model = dynident::shipped_model("mtm")?;
    let traj = FourierTrajectory::load(dynident::shipped_dir().join("mtm_identification.traj.json"))?;
    let truth = sample_feasible_parameters(&model, 0)?.with_noise(0.02);
    let mut log = simulate_log(&model, &truth, &traj, 200.0, traj.duration + 5.0)?;

    // white noise on the logged velocities
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let noise = Normal::new(0.0, 0.01).unwrap();
    log.dq.iter_mut().for_each(|x| *x += noise.sample(&mut rng));

    for cutoff in [None, Some(3.0), Some(1.8)] {
        let options = match cutoff {
            Some(c) => ProcessOptions::with_cutoff(c),
            None => ProcessOptions::default(),
        };
        let p = process_log(&log, &options)?;
        let (mut err, mut norm) = (0.0, 0.0);
        for i in 0..p.len() {
            let exact = eval_trajectory(&traj, p.log.t[i]).ddq;
            err += (p.ddq.row(i).transpose() - &exact).norm_squared();
            norm += exact.norm_squared();
        }
        let label = cutoff.map_or("unfiltered".to_string(), |c| format!("{c} Hz"));
        println!("{label:>10}: {} samples, ddq RMS error {:.2}%", p.len(), 100.0 * (err / norm).sqrt());
    }
    Ok(())
}
