//! Convergence diagnostics: split R-hat, multi-chain effective sample size
//! and energy Bayesian fraction of missing information.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::sampler::PosteriorDraws;

/// Per-parameter R-hat above this is a convergence warning.
pub const RHAT_THRESHOLD: f64 = 1.1;
/// Per-chain E-BFMI below this is an exploration warning.
pub const E_BFMI_THRESHOLD: f64 = 0.3;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Split R-hat over `2 * chains` half-chains.
///
/// Returns NaN when the pooled draws have no variance (or halves are too
/// short), and `+inf` when chains are individually constant but disagree.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let Some(n_min) = chains.iter().map(|c| c.len()).min() else {
        return f64::NAN;
    };
    let half = n_min / 2;
    if half < 2 {
        return f64::NAN;
    }
    let mut halves: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let c = &c[..n_min];
        halves.push(&c[..half]);
        halves.push(&c[n_min - half..]);
    }
    let n = half as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let within = halves.iter().map(|h| sample_var(h)).sum::<f64>() / halves.len() as f64;
    let between = n * sample_var(&means);
    if within == 0.0 {
        return if between > 0.0 { f64::INFINITY } else { f64::NAN };
    }
    let var_plus = (n - 1.0) / n * within + between / n;
    (var_plus / within).sqrt()
}

/// Biased (divide-by-n) autocovariance at every lag, via FFT.
fn autocovariance(x: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|&v| Complex::new(v - m, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in &mut buf {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf[..n].iter().map(|c| c.re / (size as f64 * n as f64)).collect()
}

/// Multi-chain effective sample size with Geyer's initial monotone
/// sequence truncation, combining within-chain autocovariances with the
/// between-chain variance (Stan's estimator). NaN for fewer than 4 draws
/// per chain or zero variance.
pub fn effective_sample_size(chains: &[&[f64]]) -> f64 {
    let Some(n) = chains.iter().map(|c| c.len()).min() else {
        return f64::NAN;
    };
    if n < 4 {
        return f64::NAN;
    }
    let m = chains.len();
    let mut planner = FftPlanner::new();
    let acov: Vec<Vec<f64>> = chains
        .iter()
        .map(|c| autocovariance(&c[..n], &mut planner))
        .collect();
    let nf = n as f64;
    let chain_means: Vec<f64> = chains.iter().map(|c| mean(&c[..n])).collect();
    let mean_var = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_var(&chain_means);
    }
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let mean_acov = |t: usize| acov.iter().map(|a| a[t]).sum::<f64>() / m as f64;
    let rho = |t: usize| 1.0 - (mean_var - mean_acov(t)) / var_plus;

    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = rho(1);
    rho_hat[1] = rho_odd;
    let mut s = 1;
    while s + 4 < n && rho_even + rho_odd > 0.0 {
        rho_even = rho(s + 1);
        rho_odd = rho(s + 2);
        if rho_even + rho_odd >= 0.0 {
            rho_hat[s + 1] = rho_even;
            rho_hat[s + 2] = rho_odd;
        }
        s += 2;
    }
    let max_s = s;
    if rho_even > 0.0 {
        rho_hat[max_s + 1] = rho_even;
    }
    // initial monotone sequence
    let mut s = 1;
    while s + 3 <= max_s {
        if rho_hat[s + 1] + rho_hat[s + 2] > rho_hat[s - 1] + rho_hat[s] {
            let avg = (rho_hat[s - 1] + rho_hat[s]) / 2.0;
            rho_hat[s + 1] = avg;
            rho_hat[s + 2] = avg;
        }
        s += 2;
    }
    let total = (m * n) as f64;
    let tau = -1.0 + 2.0 * rho_hat[..max_s].iter().sum::<f64>() + rho_hat[max_s + 1];
    total / tau.max(1.0 / total.log10())
}

/// Monte Carlo standard error of the mean.
pub fn mcse(chains: &[&[f64]]) -> f64 {
    let all: Vec<f64> = chains.iter().flat_map(|c| c.iter().copied()).collect();
    (sample_var(&all) / effective_sample_size(chains)).sqrt()
}

/// `Σ (E_t − E_{t−1})² / Σ (E_t − Ē)²` for one chain. NaN for constant
/// energies or fewer than two values.
pub fn e_bfmi(energies: &[f64]) -> f64 {
    if energies.len() < 2 {
        return f64::NAN;
    }
    let m = mean(energies);
    let denom: f64 = energies.iter().map(|e| (e - m).powi(2)).sum();
    if denom == 0.0 {
        return f64::NAN;
    }
    let num: f64 = energies.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    num / denom
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub rhat: Vec<f64>,
    pub n_eff: Vec<f64>,
    pub e_bfmi: Vec<f64>,
    pub n_divergent: Vec<usize>,
}

impl Diagnostics {
    pub fn compute(draws: &PosteriorDraws) -> Self {
        let mut rhat = Vec::with_capacity(draws.dim);
        let mut n_eff = Vec::with_capacity(draws.dim);
        for p in 0..draws.dim {
            let traces = draws.traces(p);
            let refs: Vec<&[f64]> = traces.iter().map(|t| t.as_slice()).collect();
            rhat.push(split_rhat(&refs));
            n_eff.push(effective_sample_size(&refs));
        }
        Self {
            rhat,
            n_eff,
            e_bfmi: (0..draws.n_chains)
                .map(|c| e_bfmi(draws.chain_energies(c)))
                .collect(),
            n_divergent: draws.divergent.chunks(draws.n_samples.max(1))
                .map(|c| c.iter().filter(|&&d| d).count())
                .collect(),
        }
    }

    /// Largest R-hat; NaN/inf entries propagate as `+inf`.
    pub fn max_rhat(&self) -> f64 {
        self.rhat
            .iter()
            .map(|&r| if r.is_finite() { r } else { f64::INFINITY })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_n_eff(&self) -> f64 {
        self.n_eff
            .iter()
            .map(|&r| if r.is_nan() { 0.0 } else { r })
            .fold(f64::INFINITY, f64::min)
    }

    /// Parameters whose R-hat is undefined or above the threshold.
    pub fn unconverged(&self, threshold: f64) -> Vec<usize> {
        (0..self.rhat.len())
            .filter(|&i| !(self.rhat[i] < threshold))
            .collect()
    }

    pub fn low_bfmi_chains(&self) -> Vec<usize> {
        (0..self.e_bfmi.len())
            .filter(|&c| !(self.e_bfmi[c] >= E_BFMI_THRESHOLD))
            .collect()
    }

    pub fn converged(&self) -> bool {
        self.unconverged(RHAT_THRESHOLD).is_empty()
    }

    pub fn total_divergent(&self) -> usize {
        self.n_divergent.iter().sum()
    }

    pub fn summary(&self) -> DiagnosticsSummary {
        let finite = |v: f64| v.is_finite().then_some(v);
        DiagnosticsSummary {
            max_rhat: finite(self.max_rhat()),
            min_n_eff: finite(self.min_n_eff()),
            n_unconverged: self.unconverged(RHAT_THRESHOLD).len(),
            e_bfmi: self.e_bfmi.iter().map(|&v| finite(v)).collect(),
            n_divergent: self.n_divergent.clone(),
            converged: self.converged(),
        }
    }

    /// Key-value text report, one entry per line.
    pub fn report(&self, names: &[String]) -> String {
        let mut out = String::new();
        let s = self.summary();
        let fmt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| x.to_string());
        out += &format!("converged = {}\n", s.converged);
        out += &format!("rhat_threshold = {RHAT_THRESHOLD}\n");
        out += &format!("max_rhat = {}\n", fmt(s.max_rhat));
        out += &format!("min_n_eff = {}\n", fmt(s.min_n_eff));
        out += &format!("n_unconverged = {}\n", s.n_unconverged);
        for (c, v) in s.e_bfmi.iter().enumerate() {
            out += &format!("e_bfmi[{}] = {}\n", c + 1, fmt(*v));
        }
        for (c, v) in s.n_divergent.iter().enumerate() {
            out += &format!("n_divergent[{}] = {v}\n", c + 1);
        }
        for (i, name) in names.iter().enumerate().take(self.rhat.len()) {
            out += &format!("rhat.{name} = {}\n", self.rhat[i]);
            out += &format!("n_eff.{name} = {}\n", self.n_eff[i]);
        }
        out
    }
}

/// Serializable subset of [`Diagnostics`]; undefined values become `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub max_rhat: Option<f64>,
    pub min_n_eff: Option<f64>,
    pub n_unconverged: usize,
    pub e_bfmi: Vec<Option<f64>>,
    pub n_divergent: Vec<usize>,
    pub converged: bool,
}
