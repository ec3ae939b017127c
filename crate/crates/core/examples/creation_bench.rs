//! Bench settings that produce MEMS across both subclasses.

use mems::apparatus::mems_pipeline;
use mems::states::MemsParam;

fn main() -> mems::Result<()> {
    println!("{:>7} {:>4} {:>8} {:>8} {:>8} {:>9} {:>9} {:>10}", "r", "sub", "theta1", "HWP2", "HWP3", "delay1", "delay2", "fidelity");
    for r in [1.0, 0.9, 0.778, 2.0 / 3.0, 0.5, 0.3651, 0.1, 0.0] {
        let p = MemsParam::for_r(r)?;
        let out = mems_pipeline(p)?;
        println!(
            "{r:>7.4} {:>4?} {:>8.4} {:>8.4} {:>8.4} {:>9.2} {:>9.2} {:>10.7}",
            p.subclass,
            out.theta1.to_degrees(),
            out.waveplates.theta2.to_degrees(),
            out.waveplates.theta3.to_degrees(),
            out.decoherer.delay_arm1,
            out.decoherer.delay_arm2,
            out.fidelity
        );
    }
    Ok(())
}
