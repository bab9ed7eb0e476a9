//! Holds out one engine type, fits the rest, and scores the archetype
//! forecast for the held-out type against naive baselines.
//!
//! `cargo run --release --example new_type_holdout -- [seed] [type]`

use hbspline::datagen::{generate, FleetScenario};
use hbspline::eval::new_type_eval;
use hbspline::workflow::FitConfig;

fn main() -> hbspline::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let held_out = args.next().unwrap_or_else(|| "Type 4".into());
    let records = generate(&FleetScenario::default(), seed)?.records;
    let train = records.filter(|r| r.engine_type != held_out);
    let test = records.filter(|r| r.engine_type == held_out);
    let mut cfg = FitConfig::default();
    cfg.sampler.seed = seed;
    let report = new_type_eval(&train, &test, &cfg)?;
    print!("{}", report.to_table());
    Ok(())
}
