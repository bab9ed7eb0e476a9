//! Fits the default fleet and compares the four forecast modes: an existing
//! ship, a new ship of a known type, a new engine type, and a new type
//! judged similar to an existing one.
//!
//! `cargo run --release --example forecast_modes -- [seed]`

use hbspline::datagen::{generate, FleetScenario};
use hbspline::forecast::{
    curve_for_new_ship, curve_for_new_type, curve_for_ship, curve_with_qualitative_prior,
    ForecastCurve, ForecastOptions, NewShipVariant, Scale,
};
use hbspline::workflow::{fit, FitConfig};

fn show(name: &str, c: &ForecastCurve) {
    let w = c.width();
    println!(
        "{name:<28} mean width {:.3}   age 1 {:.3} [{:.3}, {:.3}]   age 31 {:.3} [{:.3}, {:.3}]",
        w.iter().sum::<f64>() / w.len() as f64,
        c.mean[0],
        c.lower[0],
        c.upper[0],
        c.mean[30],
        c.lower[30],
        c.upper[30]
    );
}

fn main() -> hbspline::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let fleet = generate(&FleetScenario::default(), seed)?;
    let mut cfg = FitConfig::default();
    cfg.lifecycle = Some(31);
    cfg.sampler.seed = seed;
    let art = fit(&fleet.records, &cfg)?;

    let opts = ForecastOptions {
        scale: Scale::Original,
        seed,
        ..ForecastOptions::default()
    };
    let e = art.type_index("Type 3")?;
    let s = art.ship_index(&fleet.records.filter(|r| r.engine_type == "Type 3").ship_ids()[0])?;
    println!("90% bands on the failure-rate scale\n");
    show("existing ship", &curve_for_ship(&art, s, &opts)?);
    show(
        "new ship, type curve",
        &curve_for_new_ship(&art, e, NewShipVariant::PlugIn, &opts)?,
    );
    show(
        "new ship, drawn around type",
        &curve_for_new_ship(&art, e, NewShipVariant::Hierarchical, &opts)?,
    );
    show("similar to Type 3", &curve_with_qualitative_prior(&art, e, &opts)?);
    show("new engine type", &curve_for_new_type(&art, &opts)?);
    let predictive = ForecastOptions {
        predictive: true,
        ..opts
    };
    show("existing ship, predictive", &curve_for_ship(&art, s, &predictive)?);
    Ok(())
}
