//! Generates a synthetic fleet with bathtub-shaped type curves, warranty
//! censoring and imbalanced ship counts, and writes it as CSV.
//!
//! `cargo run --example simulate_fleet -- [seed] [out.csv]`

use hbspline::datagen::{generate, FleetScenario};

fn main() -> hbspline::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let scenario = FleetScenario::default();
    let fleet = generate(&scenario, seed)?;

    println!("{:<8} {:>6} {:>6}", "type", "ships", "obs");
    for name in &scenario.type_names {
        let rows = fleet.records.filter(|r| &r.engine_type == name);
        println!("{name:<8} {:>6} {:>6}", rows.ship_ids().len(), rows.len());
    }
    println!(
        "{} rows censored by warranty, {} floored at zero",
        fleet.truth.n_censored, fleet.truth.n_floored
    );

    println!("\ntype curves at ages 1, 5, 10, 20, 31:");
    for (e, name) in scenario.type_names.iter().enumerate() {
        let c = scenario.type_curve(e);
        println!(
            "{name:<8} {:.3} {:.3} {:.3} {:.3} {:.3}",
            c[0], c[4], c[9], c[19], c[30]
        );
    }

    if let Some(path) = args.next() {
        fleet.records.write_csv(&path)?;
        println!("written to {path}");
    }
    Ok(())
}
