//! Procrustean filtering of the r = 2/3 MEMS, piece by piece.

use mems::concentrate::{rotate_for_filtering, trajectory, PartialPolarizer};
use mems::states::{mems, MemsParam, Subclass};

fn main() -> mems::Result<()> {
    let rho = rotate_for_filtering(&mems(MemsParam::new(2.0 / 3.0, Subclass::I)?));
    for (name, pol) in [("ideal", PartialPolarizer::ideal()), ("measured", PartialPolarizer::measured())] {
        println!("{name} polarizer (t_h = {:.3}, t_v = {:.3})", pol.t_h, pol.t_v);
        println!("{:>3} {:>8} {:>8} {:>9} {:>9}", "n", "S_L", "T", "survival", "fidelity");
        for p in trajectory(&rho, pol, 8)? {
            println!("{:>3} {:>8.4} {:>8.4} {:>9.4} {:>9.4}", p.n, p.s_l, p.t, p.success_prob, p.fidelity);
        }
        println!();
    }
    Ok(())
}
