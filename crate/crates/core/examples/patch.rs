//! States within a fidelity threshold of a MEMS, written as `s_l,t,f` CSV.

use mems::analysis::{sample_patch_parallel, write_patch_csv, SamplerConfig};
use mems::states::mems_r;

fn main() -> mems::Result<()> {
    let target = mems_r(2.0 / 3.0)?;
    let cfg = SamplerConfig::default();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let patch = sample_patch_parallel(&target, &cfg, workers)?;
    let (ds, dt) = patch.spread();
    eprintln!(
        "{} samples, acceptance {:.1}%, spread S_L {ds:.4}, T {dt:.4}",
        patch.samples.len(),
        100.0 * patch.acceptance_rate
    );
    write_patch_csv(std::io::stdout().lock(), &patch.samples)
}
