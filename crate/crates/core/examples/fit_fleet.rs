//! Fits the hierarchical model to a synthetic 99-ship fleet and saves the
//! artifact.
//!
//! ```text
//! cargo run --release --example fit_fleet -- [seed] [out_dir]
//! ```

use std::time::Instant;

use hbspline::datagen::{generate, FleetScenario};
use hbspline::workflow::{fit, FitConfig};

fn main() -> hbspline::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed must be an integer"));
    let out = args.next().unwrap_or_else(|| "runs/fit_fleet".into());

    let fleet = generate(&FleetScenario::default(), seed)?;
    println!(
        "{} observations, {} ships, {} censored, {} floored",
        fleet.records.len(),
        fleet.records.ship_ids().len(),
        fleet.truth.n_censored,
        fleet.truth.n_floored
    );

    let mut cfg = FitConfig::default();
    cfg.sampler.seed = seed;
    let start = Instant::now();
    let artifact = fit(&fleet.records, &cfg)?;
    println!("fit in {:.1?}", start.elapsed());

    let d = &artifact.meta.diagnostics;
    println!("converged: {}", artifact.meta.converged);
    println!("max R-hat: {:?}", d.max_rhat);
    println!("min n_eff: {:?}", d.min_n_eff);
    println!("E-BFMI: {:?}", d.e_bfmi);
    println!("divergent: {:?}", d.n_divergent);
    for c in &artifact.meta.chains {
        println!("step size {:.4}, accept {:.3}", c.step_size, c.mean_accept);
    }
    for w in &artifact.meta.warnings {
        println!("warning: {w}");
    }
    artifact.save(&out)?;
    println!("artifact written to {out}");
    Ok(())
}
