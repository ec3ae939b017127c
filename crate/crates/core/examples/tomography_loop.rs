//! Simulate coincidence counts and recover the state by maximum likelihood.

use mems::states::{fidelity, mems_r};
use mems::tomography::{ml_reconstruct, simulate_counts, MLSettings, Noise, ProjectorSet};

fn main() -> mems::Result<()> {
    let truth = mems_r(2.0 / 3.0)?;
    for (name, set) in [("16 settings", ProjectorSet::standard()), ("36 settings", ProjectorSet::extended())] {
        for exposure in [1e3, 1e4, 1e5] {
            let counts = simulate_counts(&truth, &set, exposure, 1, Noise::Poisson)?;
            let rec = ml_reconstruct(&counts, &set, &MLSettings::default())?;
            println!(
                "{name}, exposure {exposure:>7}: fidelity {:.5} after {} iterations (converged: {})",
                fidelity(&truth, &rec.state)?,
                rec.iterations,
                rec.converged
            );
        }
    }
    Ok(())
}
