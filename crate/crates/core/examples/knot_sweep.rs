//! Chooses the number of interior knots by holdout cross-validation.
//!
//! `cargo run --release --example knot_sweep -- [seed]`

use hbspline::datagen::{generate, FleetScenario};
use hbspline::eval::{knot_sweep, CvConfig};

fn main() -> hbspline::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let records = generate(&FleetScenario::default(), seed)?.records;
    let mut cfg = CvConfig::default();
    cfg.fit.sampler.seed = seed;
    cfg.fit.sampler.n_warmup = 500;
    cfg.fit.sampler.n_samples = 500;
    let sweep = knot_sweep(&records, &[2, 4, 6, 8, 10], &cfg)?;
    print!("{}", sweep.to_csv_string());
    match sweep.best {
        Some(k) => println!("best: {k} interior knots"),
        None => println!("no feasible candidate"),
    }
    Ok(())
}
