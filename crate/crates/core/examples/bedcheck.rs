use std::time::Instant;
use strata::bed::{audit_bed, build_bed, BedSpec};
use strata::planner::LayerSchedule;

fn main() {
    let t0 = Instant::now();
    let schedule = LayerSchedule::uniform(15e-3).unwrap();
    let spec = BedSpec::new([0.3, 0.17, 0.3], schedule, 7);
    let world = build_bed(&spec).unwrap();
    let build_s = t0.elapsed().as_secs_f64();
    let audit = audit_bed(&world, 0.075).unwrap();
    let oracle = 0.636 * 0.3 * 0.17 * 0.3 / strata::planner::mean_particle_volume(15e-3, 0.10);
    println!("build wall time: {:.1} s", build_s);
    println!("particles: {} (oracle {:.0})", audit.particle_count, oracle);
    println!("mean density: {:.1} kg/m3 (target 1400 +/- 7%)", audit.mean_density);
    println!("max interior dev: {:.3}", audit.max_interior_deviation);
    println!("max overlap ratio: {:.5}", audit.max_overlap_ratio);
    println!("mixing: {:.4}", audit.mixing_metric);
    println!("fill height: {:.4} m", audit.fill_height);
    println!("sim time: {:.3} s, dt {:.2e}", world.time, world.config.timestep);
}
