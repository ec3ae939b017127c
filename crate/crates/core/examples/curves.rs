//! The MEMS and Werner curves on the S_L-T plane as `curve,s_l,t` CSV.

use mems::analysis::{boundary_curves, write_curves_csv};

fn main() -> mems::Result<()> {
    write_curves_csv(std::io::stdout().lock(), &boundary_curves(200)?)
}
