//! How fidelity, T and S_L respond to a small error in r.

use mems::analysis::{log_deltas, sensitivity_exponents};
use mems::states::Subclass;

fn main() -> mems::Result<()> {
    for r0 in [0.7, 0.8, 0.9] {
        let e = sensitivity_exponents(r0, &log_deltas(1e-4, 1e-2, 9), Subclass::I)?;
        println!(
            "r0 = {r0}: 1-F ~ dr^{:.3}, dT ~ dr^{:.3}, dS_L ~ dr^{:.3}",
            e.fid_exponent, e.t_exponent, e.sl_exponent
        );
    }
    Ok(())
}
