//! Concentration schemes compared on one MEMS.

use mems::concentrate::{scheme_table, PartialPolarizer};
use mems::states::{self, mems_r};

fn main() -> mems::Result<()> {
    let r = std::env::args().nth(1).map_or(Ok(0.778), |s| s.parse()).expect("r must be a number");
    let rho = mems_r(r)?;
    println!("input r = {r}, E_F = {:.3}", states::entanglement_of_formation(&rho)?);
    println!("{:<16} {:>9} {:>8} {:>9}", "scheme", "success", "E_F", "E_F/pair");
    for row in scheme_table(&rho, PartialPolarizer::ideal(), &[2, 4, 6])? {
        println!(
            "{:<16} {:>9.3} {:>8.3} {:>9.3}",
            row.scheme.label(),
            row.success_prob,
            row.ef_success,
            row.ef_per_pair
        );
    }
    Ok(())
}
