//! Runs the HMC sampler on a correlated two-dimensional Gaussian and checks
//! its draws against the known moments.
//!
//! `cargo run --release --example hmc_gaussian -- [seed]`

use hbspline::diagnostics::Diagnostics;
use hbspline::sampler::{sample, Init, LogDensity, SamplerConfig};

/// Zero-mean Gaussian with unit variances and correlation `rho`.
struct Correlated {
    rho: f64,
}

impl LogDensity for Correlated {
    fn dim(&self) -> usize {
        2
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let r = 1.0 - self.rho * self.rho;
        grad[0] = -(x[0] - self.rho * x[1]) / r;
        grad[1] = -(x[1] - self.rho * x[0]) / r;
        -0.5 * (x[0] * x[0] - 2.0 * self.rho * x[0] * x[1] + x[1] * x[1]) / r
    }
}

fn main() -> hbspline::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let target = Correlated { rho: 0.8 };
    let cfg = SamplerConfig {
        seed,
        ..SamplerConfig::default()
    };
    let draws = sample(&target, &Init::default(), &cfg)?;
    let n = draws.n_draws() as f64;
    let mut m = [0.0; 2];
    for d in draws.iter_draws() {
        m[0] += d[0] / n;
        m[1] += d[1] / n;
    }
    let (mut v0, mut v1, mut c) = (0.0, 0.0, 0.0);
    for d in draws.iter_draws() {
        v0 += (d[0] - m[0]).powi(2) / n;
        v1 += (d[1] - m[1]).powi(2) / n;
        c += (d[0] - m[0]) * (d[1] - m[1]) / n;
    }
    println!("means {:.3} {:.3} (truth 0 0)", m[0], m[1]);
    println!("variances {v0:.3} {v1:.3} (truth 1 1)");
    println!("correlation {:.3} (truth {})", c / (v0 * v1).sqrt(), target.rho);
    for (i, ch) in draws.chains.iter().enumerate() {
        println!(
            "chain {}: step {:.3}, accept {:.3}, divergences {}",
            i + 1,
            ch.step_size,
            ch.mean_accept,
            ch.divergences
        );
    }
    let diag = Diagnostics::compute(&draws);
    print!("{}", diag.report(&["x".into(), "y".into()]));
    Ok(())
}
