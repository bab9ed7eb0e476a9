//! Partial pooling against no pooling and complete pooling under two-fold
//! observation holdout, overall and for sparsely observed ships.
//!
//! `cargo run --release --example pooling_cv -- [seed]`

use hbspline::datagen::{generate, FleetScenario};
use hbspline::eval::{pooling_baselines, CvConfig};

fn main() -> hbspline::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(11);
    let fleet = generate(&FleetScenario::default(), seed)?;
    let mut cfg = CvConfig::default();
    cfg.fit.sampler.seed = seed;
    let cmp = pooling_baselines(&fleet.records, &cfg)?;

    println!("{:<18} {:>10} {:>10}", "method", "overall", "sparse");
    for (m, v) in &cmp.overall {
        let sparse = cmp.sparse.get(m).map_or(f64::NAN, |s| *s);
        println!("{m:<18} {v:>10.4} {sparse:>10.4}");
    }
    println!("sparse ships: {}", cmp.sparse_ships.join(" "));
    for f in &cmp.cv.folds {
        println!(
            "{}: train {} test {} converged {} ridge fallbacks {}",
            f.label,
            f.n_train,
            f.n_test,
            f.converged,
            f.ridge_fallbacks.len()
        );
    }
    Ok(())
}
