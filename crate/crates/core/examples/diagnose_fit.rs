//! Convergence diagnostics and posterior predictive checks for a fit of
//! the default fleet.
//!
//! `cargo run --release --example diagnose_fit -- [seed]`

use hbspline::datagen::{generate, FleetScenario};
use hbspline::workflow::{fit, posterior_predictive_check, FitConfig};

fn main() -> hbspline::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let records = generate(&FleetScenario::default(), seed)?.records;
    let mut cfg = FitConfig::default();
    cfg.sampler.seed = seed;
    let art = fit(&records, &cfg)?;
    let diag = art.diagnostics();
    println!("converged: {}", diag.converged());
    println!("max R-hat {:.4}, min n_eff {:.0}", diag.max_rhat(), diag.min_n_eff());
    let worst = diag
        .rhat
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| art.meta.parameter_names[i].clone())
        .unwrap_or_default();
    println!("slowest parameter: {worst}");
    let ppc = posterior_predictive_check(&art, &art.training_data()?, 200, seed)?;
    for s in &ppc.statistics {
        println!("{:<22} observed {:>8.4}  p {:.3}", s.name, s.observed, s.p_value);
    }
    Ok(())
}
