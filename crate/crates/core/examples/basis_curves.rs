//! Cubic B-spline basis on a 31-year age grid and a curve built from it.
//!
//! `cargo run --example basis_curves -- [n_interior_knots]`

use hbspline::basis::{age_grid_basis, curve, make_uniform_knots};

fn main() -> hbspline::Result<()> {
    let n_interior: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(6);
    let kv = make_uniform_knots(1.0, 31.0, n_interior, 3)?;
    let bm = age_grid_basis(&kv, 31)?;
    println!("knots: {:?}", kv.knots());
    println!("{} basis functions", bm.n_basis());

    let weights: Vec<f64> = (0..bm.n_basis())
        .map(|k| {
            let x = k as f64 / (bm.n_basis() - 1) as f64;
            2.0 * (x - 0.45).powi(2)
        })
        .collect();
    let c = curve(&bm, 0.5, &weights)?;
    println!("{:>4} {:>8} {:>8}", "age", "sum", "curve");
    for t in 0..bm.n_ages() {
        let sum: f64 = bm.row(t).iter().sum();
        println!("{:>4} {sum:>8.5} {:>8.4}", t + 1, c[t]);
    }
    Ok(())
}
