//! Fits a Yeo-Johnson transform to skewed failure rates and maps values
//! there and back.
//!
//! `cargo run --example transform_roundtrip`

use hbspline::datagen::{generate, FleetScenario};
use hbspline::transform::fit_transform;

fn main() -> hbspline::Result<()> {
    let values = generate(&FleetScenario::default(), 7)?.records.values();
    let tr = fit_transform(&values)?;
    println!(
        "lambda {:.4}, mean {:.4}, sd {:.4}",
        tr.lambda, tr.standardize_mean, tr.standardize_sd
    );

    let z: Vec<f64> = values.iter().map(|&v| tr.apply(v)).collect();
    let n = z.len() as f64;
    let m = z.iter().sum::<f64>() / n;
    let sd = (z.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
    println!("transformed: mean {m:.2e}, sd {sd:.6}");

    let mut worst = 0.0f64;
    for (&v, &zv) in values.iter().zip(&z) {
        worst = worst.max((tr.invert(zv)? - v).abs());
    }
    println!("max round-trip error over {} values: {worst:.2e}", values.len());
    for v in [0.5, 1.0, 2.0, 4.0] {
        println!("{v:>5} -> {:>8.4}", tr.apply(v));
    }
    Ok(())
}
