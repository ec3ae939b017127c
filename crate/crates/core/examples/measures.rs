//! Measures of a few reference states.

use mems::states::{self, Bell, Measures};

fn main() -> mems::Result<()> {
    let cases = [
        ("MEMS r=0.778", states::mems_r(0.778)?),
        ("MEMS r=2/3", states::mems_r(2.0 / 3.0)?),
        ("MEMS r=0.3651", states::mems_r(0.3651)?),
        ("Werner p=0.8", states::werner(0.8)?),
        ("phi+", Bell::HhPlusVv.density()),
        ("I/4", states::DensityMatrix::maximally_mixed()),
    ];
    println!("{:<14} {:>8} {:>8} {:>8} {:>8} {:>8}", "state", "T", "S_L", "C", "E_F", "purity");
    for (name, rho) in &cases {
        let m = Measures::of(rho)?;
        println!(
            "{name:<14} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            m.t, m.s_l, m.c, m.e_f, m.purity
        );
    }
    println!("\n{}", serde_json::to_string_pretty(&cases[0].1)?);
    Ok(())
}
