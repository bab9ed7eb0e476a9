//! Ranks pairs of engine types by the distance between their fitted mean
//! curves.
//!
//! `cargo run --release --example type_distances -- [seed]`

use hbspline::datagen::{generate, FleetScenario};
use hbspline::forecast::type_distance_table;
use hbspline::workflow::{fit, FitConfig};

fn main() -> hbspline::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let fleet = generate(&FleetScenario::default(), seed)?;
    let mut cfg = FitConfig::default();
    cfg.sampler.seed = seed;
    let art = fit(&fleet.records, &cfg)?;
    println!("{:<8} {:<8} {:>9}", "type", "type", "distance");
    for d in type_distance_table(&art)? {
        println!("{:<8} {:<8} {:>9.4}", d.type_a, d.type_b, d.distance);
    }
    Ok(())
}
