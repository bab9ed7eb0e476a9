//! Yeo-Johnson power transform with post-transform standardization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Search interval for the transform exponent.
pub const LAMBDA_RANGE: (f64, f64) = (-3.0, 5.0);
const GRID_STEP: f64 = 0.05;
const NEAR_ZERO: f64 = 1e-12;

pub fn yj_forward(x: f64, lambda: f64) -> f64 {
    if x >= 0.0 {
        let l = x.ln_1p();
        if lambda.abs() < NEAR_ZERO {
            l
        } else {
            (lambda * l).exp_m1() / lambda
        }
    } else {
        let m = 2.0 - lambda;
        let l = (-x).ln_1p();
        if m.abs() < NEAR_ZERO {
            -l
        } else {
            -(m * l).exp_m1() / m
        }
    }
}

/// Branch-wise inverse of [`yj_forward`]. Errors when `y` is outside the
/// image of the forward map for this exponent.
pub fn yj_inverse(y: f64, lambda: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::Domain(format!("cannot invert non-finite value {y}")));
    }
    if y >= 0.0 {
        if lambda.abs() < NEAR_ZERO {
            return Ok(y.exp_m1());
        }
        let base = lambda * y;
        if base <= -1.0 {
            return Err(Error::Domain(format!(
                "{y} is outside the transform image for lambda = {lambda}"
            )));
        }
        Ok((base.ln_1p() / lambda).exp_m1())
    } else {
        let m = 2.0 - lambda;
        if m.abs() < NEAR_ZERO {
            return Ok(-(-y).exp_m1());
        }
        let base = -m * y;
        if base <= -1.0 {
            return Err(Error::Domain(format!(
                "{y} is outside the transform image for lambda = {lambda}"
            )));
        }
        Ok(-(base.ln_1p() / m).exp_m1())
    }
}

/// Gaussian profile log-likelihood of the exponent, including the Jacobian.
pub fn profile_log_likelihood(values: &[f64], lambda: f64) -> f64 {
    let n = values.len() as f64;
    let transformed: Vec<f64> = values.iter().map(|&x| yj_forward(x, lambda)).collect();
    let mean = transformed.iter().sum::<f64>() / n;
    let var = transformed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let jac: f64 = values.iter().map(|&x| x.signum() * x.abs().ln_1p()).sum();
    -0.5 * n * var.ln() + (lambda - 1.0) * jac
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerTransform {
    pub lambda: f64,
    pub standardize_mean: f64,
    pub standardize_sd: f64,
}

impl PowerTransform {
    pub fn new(lambda: f64, standardize_mean: f64, standardize_sd: f64) -> Result<Self> {
        if !(standardize_sd > 0.0) || !standardize_sd.is_finite() {
            return Err(Error::Validation(format!(
                "standardization sd must be positive, got {standardize_sd}"
            )));
        }
        Ok(Self {
            lambda,
            standardize_mean,
            standardize_sd,
        })
    }

    /// Raw value to the modelling scale.
    pub fn apply(&self, x: f64) -> f64 {
        (yj_forward(x, self.lambda) - self.standardize_mean) / self.standardize_sd
    }

    /// Modelling scale back to the raw scale.
    pub fn invert(&self, z: f64) -> Result<f64> {
        yj_inverse(z * self.standardize_sd + self.standardize_mean, self.lambda)
    }
}

/// Maximum-likelihood exponent (grid search refined by golden section),
/// followed by standardization of the transformed values.
pub fn fit_transform(values: &[f64]) -> Result<PowerTransform> {
    if values.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 values to fit a transform, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("transform input must be finite".into()));
    }
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        return Err(Error::DegenerateVariance(
            "cannot fit a power transform to constant input".into(),
        ));
    }

    let (lo, hi) = LAMBDA_RANGE;
    let n_grid = ((hi - lo) / GRID_STEP).round() as usize;
    let mut best = (lo, f64::NEG_INFINITY);
    for i in 0..=n_grid {
        let lambda = lo + GRID_STEP * i as f64;
        let ll = profile_log_likelihood(values, lambda);
        if ll > best.1 {
            best = (lambda, ll);
        }
    }
    let a = (best.0 - GRID_STEP).max(lo);
    let b = (best.0 + GRID_STEP).min(hi);
    let lambda = golden_section_max(|l| profile_log_likelihood(values, l), a, b, 1e-9);

    let transformed: Vec<f64> = values.iter().map(|&x| yj_forward(x, lambda)).collect();
    let n = transformed.len() as f64;
    let mean = transformed.iter().sum::<f64>() / n;
    let sd = (transformed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(sd > 0.0) {
        return Err(Error::DegenerateVariance(
            "transformed values have zero variance".into(),
        ));
    }
    PowerTransform::new(lambda, mean, sd)
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
