//! Multi-chain Hamiltonian Monte Carlo with jittered trajectory length,
//! dual-averaging step-size adaptation and a diagonal mass matrix.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A differentiable log density over an unconstrained space.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log density.
    /// Non-finite return values mark the point as invalid.
    fn log_density_and_grad(&self, position: &[f64], grad: &mut [f64]) -> f64;
}

/// Energy error beyond which a transition is flagged divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;
const INIT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_samples: usize,
    pub target_accept: f64,
    pub max_leapfrog_steps: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_warmup: 1000,
            n_samples: 1000,
            target_accept: 0.8,
            max_leapfrog_steps: 64,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.n_warmup == 0 || self.n_samples == 0 {
            return Err(Error::Validation(
                "chains, warmup and samples must all be at least 1".into(),
            ));
        }
        if self.max_leapfrog_steps == 0 {
            return Err(Error::Validation("max_leapfrog_steps must be at least 1".into()));
        }
        if !(self.target_accept > 0.5 && self.target_accept < 0.999) {
            return Err(Error::Validation(format!(
                "target_accept must lie in (0.5, 0.999), got {}",
                self.target_accept
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Init {
    /// Each coordinate drawn uniformly from `[-radius, radius]`.
    Uniform { radius: f64 },
    /// Same starting point for every chain.
    Point(Vec<f64>),
}

impl Default for Init {
    fn default() -> Self {
        Init::Uniform { radius: 2.0 }
    }
}

/// Adaptation results and per-chain summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub divergences: usize,
    pub warmup_divergences: usize,
    pub mean_accept: f64,
}

/// Retained draws, chain-major: `draws[(chain * n_samples + iter) * dim + p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub n_chains: usize,
    pub n_samples: usize,
    pub dim: usize,
    pub draws: Vec<f64>,
    pub energies: Vec<f64>,
    pub divergent: Vec<bool>,
    pub chains: Vec<ChainStats>,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.n_chains * self.n_samples
    }

    pub fn draw(&self, chain: usize, iter: usize) -> &[f64] {
        let i = (chain * self.n_samples + iter) * self.dim;
        &self.draws[i..i + self.dim]
    }

    /// Draw by flat index across chains.
    pub fn flat_draw(&self, i: usize) -> &[f64] {
        &self.draws[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_draws(&self) -> impl Iterator<Item = &[f64]> {
        self.draws.chunks_exact(self.dim)
    }

    /// One parameter's trace in one chain.
    pub fn trace(&self, chain: usize, param: usize) -> Vec<f64> {
        (0..self.n_samples).map(|i| self.draw(chain, i)[param]).collect()
    }

    pub fn traces(&self, param: usize) -> Vec<Vec<f64>> {
        (0..self.n_chains).map(|c| self.trace(c, param)).collect()
    }

    pub fn chain_energies(&self, chain: usize) -> &[f64] {
        &self.energies[chain * self.n_samples..(chain + 1) * self.n_samples]
    }

    pub fn divergences_per_chain(&self) -> Vec<usize> {
        self.chains.iter().map(|c| c.divergences).collect()
    }

    /// Applies `f` to every draw, e.g. to move to the constrained scale.
    pub fn map_draws(&self, f: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<PosteriorDraws> {
        let mut out = Vec::with_capacity(self.draws.len());
        let mut dim = None;
        for d in self.iter_draws() {
            let v = f(d)?;
            if *dim.get_or_insert(v.len()) != v.len() {
                return Err(Error::shape(dim.unwrap(), v.len()));
            }
            out.extend(v);
        }
        Ok(PosteriorDraws {
            n_chains: self.n_chains,
            n_samples: self.n_samples,
            dim: dim.unwrap_or(self.dim),
            draws: out,
            energies: self.energies.clone(),
            divergent: self.divergent.clone(),
            chains: self.chains.clone(),
        })
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for d in self.iter_draws() {
            for (a, b) in m.iter_mut().zip(d) {
                *a += b;
            }
        }
        let n = self.n_draws() as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }
}

/// Stan-style dual averaging of the log step size.
#[derive(Debug, Clone)]
struct DualAveraging {
    mu: f64,
    target: f64,
    counter: f64,
    h_bar: f64,
    log_eps_bar: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(step: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * step).ln(),
            target,
            counter: 0.0,
            h_bar: 0.0,
            log_eps_bar: 0.0,
        }
    }

    fn update(&mut self, accept: f64) -> f64 {
        self.counter += 1.0;
        let accept = accept.min(1.0);
        let eta = 1.0 / (self.counter + Self::T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept);
        let log_eps = self.mu - self.counter.sqrt() / Self::GAMMA * self.h_bar;
        let x_eta = self.counter.powf(-Self::KAPPA);
        self.log_eps_bar = x_eta * log_eps + (1.0 - x_eta) * self.log_eps_bar;
        log_eps.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Running mean/variance.
#[derive(Debug, Clone)]
struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self {
            n: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / self.n;
            *s += d * (v - *m);
        }
    }

    /// Variance shrunk toward a small constant, as in Stan's windowed adaptation.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|s| {
                let var = s / (n - 1.0);
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct State {
    position: Vec<f64>,
    grad: Vec<f64>,
    log_density: f64,
}

/// One leapfrog step in place. Returns the new log density.
pub(crate) fn leapfrog<T: LogDensity + ?Sized>(
    target: &T,
    position: &mut [f64],
    momentum: &mut [f64],
    grad: &mut [f64],
    step: f64,
    inv_metric: &[f64],
) -> f64 {
    for (p, g) in momentum.iter_mut().zip(grad.iter()) {
        *p += 0.5 * step * g;
    }
    for ((x, p), m) in position.iter_mut().zip(momentum.iter()).zip(inv_metric) {
        *x += step * m * p;
    }
    let lp = target.log_density_and_grad(position, grad);
    for (p, g) in momentum.iter_mut().zip(grad.iter()) {
        *p += 0.5 * step * g;
    }
    lp
}

pub(crate) fn kinetic(momentum: &[f64], inv_metric: &[f64]) -> f64 {
    0.5 * momentum.iter().zip(inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
}

struct Transition {
    accept_prob: f64,
    divergent: bool,
    energy: f64,
}

struct Chain<'a, T: LogDensity + ?Sized> {
    target: &'a T,
    rng: ChaCha8Rng,
    state: State,
    inv_metric: Vec<f64>,
    max_steps: usize,
}

impl<T: LogDensity + ?Sized> Chain<'_, T> {
    fn draw_momentum(&mut self) -> Vec<f64> {
        let rng = &mut self.rng;
        self.inv_metric
            .iter()
            .map(|m| {
                let z: f64 = rng.sample(StandardNormal);
                z / m.sqrt()
            })
            .collect()
    }

    fn transition(&mut self, step: f64, n_steps: usize) -> Transition {
        let mut p = self.draw_momentum();
        let h0 = -self.state.log_density + kinetic(&p, &self.inv_metric);
        let mut x = self.state.position.clone();
        let mut g = self.state.grad.clone();
        let mut lp = self.state.log_density;
        for _ in 0..n_steps {
            lp = leapfrog(self.target, &mut x, &mut p, &mut g, step, &self.inv_metric);
            if !lp.is_finite() {
                break;
            }
        }
        let h1 = -lp + kinetic(&p, &self.inv_metric);
        let u: f64 = self.rng.random();
        if !h1.is_finite() || h1 - h0 > DIVERGENCE_THRESHOLD {
            return Transition {
                accept_prob: 0.0,
                divergent: true,
                energy: h0,
            };
        }
        let accept_prob = (h0 - h1).exp().min(1.0);
        if u < accept_prob {
            self.state = State {
                position: x,
                grad: g,
                log_density: lp,
            };
            Transition {
                accept_prob,
                divergent: false,
                energy: h1,
            }
        } else {
            Transition {
                accept_prob,
                divergent: false,
                energy: h0,
            }
        }
    }

    /// Doubles or halves the step until the one-step acceptance crosses 0.8.
    fn reasonable_step(&mut self, mut step: f64) -> f64 {
        let mut direction = 0.0;
        for _ in 0..100 {
            let mut p = self.draw_momentum();
            let h0 = -self.state.log_density + kinetic(&p, &self.inv_metric);
            let mut x = self.state.position.clone();
            let mut g = self.state.grad.clone();
            let lp = leapfrog(self.target, &mut x, &mut p, &mut g, step, &self.inv_metric);
            let h1 = -lp + kinetic(&p, &self.inv_metric);
            let delta = if h1.is_finite() { h0 - h1 } else { f64::NEG_INFINITY };
            let d = if delta > 0.8f64.ln() { 1.0 } else { -1.0 };
            if direction == 0.0 {
                direction = d;
            } else if d != direction {
                break;
            }
            let next = step * 2f64.powf(direction);
            if !(1e-10..=1e7).contains(&next) {
                break;
            }
            step = next;
        }
        step
    }
}

fn initial_state<T: LogDensity + ?Sized>(
    target: &T,
    init: &Init,
    rng: &mut ChaCha8Rng,
) -> Result<State> {
    let dim = target.dim();
    let mut grad = vec![0.0; dim];
    match init {
        Init::Point(x) => {
            if x.len() != dim {
                return Err(Error::shape(dim, x.len()));
            }
            let lp = target.log_density_and_grad(x, &mut grad);
            if lp.is_finite() && grad.iter().all(|g| g.is_finite()) {
                return Ok(State {
                    position: x.clone(),
                    grad,
                    log_density: lp,
                });
            }
            Err(Error::Initialization("non-finite target at the given point".into()))
        }
        Init::Uniform { radius } => {
            for _ in 0..INIT_ATTEMPTS {
                let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-radius..=*radius)).collect();
                let lp = target.log_density_and_grad(&x, &mut grad);
                if lp.is_finite() && grad.iter().all(|g| g.is_finite()) {
                    return Ok(State {
                        position: x,
                        grad,
                        log_density: lp,
                    });
                }
            }
            Err(Error::Initialization(format!(
                "non-finite target at {INIT_ATTEMPTS} random starting points"
            )))
        }
    }
}

struct ChainOutput {
    draws: Vec<f64>,
    energies: Vec<f64>,
    divergent: Vec<bool>,
    stats: ChainStats,
}

/// Warmup schedule: an initial step-size-only buffer, two metric windows
/// (the second in the later half of warmup, its estimate is the one kept),
/// and a final step-size-only buffer.
fn metric_windows(n_warmup: usize) -> Option<(usize, usize, usize)> {
    if n_warmup < 20 {
        return None;
    }
    let init_end = (0.15 * n_warmup as f64).round() as usize;
    let term_start = n_warmup - (0.1 * n_warmup as f64).round() as usize;
    let mid = (init_end + term_start) / 2;
    Some((init_end, mid, term_start))
}

fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    init: &Init,
    cfg: &SamplerConfig,
    chain: usize,
) -> Result<ChainOutput> {
    let dim = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64);
    let state = initial_state(target, init, &mut rng)?;
    let mut ch = Chain {
        target,
        rng,
        state,
        inv_metric: vec![1.0; dim],
        max_steps: cfg.max_leapfrog_steps,
    };

    let mut step = ch.reasonable_step(1.0);
    let mut da = DualAveraging::new(step, cfg.target_accept);
    let windows = metric_windows(cfg.n_warmup);
    let mut welford = Welford::new(dim);
    let mut warmup_divergences = 0;

    for it in 0..cfg.n_warmup {
        let n_steps = ch.rng.random_range(1..=ch.max_steps);
        let t = ch.transition(step, n_steps);
        warmup_divergences += t.divergent as usize;
        step = da.update(t.accept_prob);

        if let Some((init_end, mid, term_start)) = windows {
            if it >= init_end && it < term_start {
                welford.push(&ch.state.position);
            }
            if it + 1 == mid || it + 1 == term_start {
                ch.inv_metric = welford.regularized_variance();
                welford = Welford::new(dim);
                step = ch.reasonable_step(step);
                da = DualAveraging::new(step, cfg.target_accept);
            }
        }
    }
    step = da.final_step();

    let mut draws = Vec::with_capacity(cfg.n_samples * dim);
    let mut energies = Vec::with_capacity(cfg.n_samples);
    let mut divergent = Vec::with_capacity(cfg.n_samples);
    let mut accept_sum = 0.0;
    for _ in 0..cfg.n_samples {
        let n_steps = ch.rng.random_range(1..=ch.max_steps);
        let t = ch.transition(step, n_steps);
        accept_sum += t.accept_prob;
        draws.extend_from_slice(&ch.state.position);
        energies.push(t.energy);
        divergent.push(t.divergent);
    }
    let divergences = divergent.iter().filter(|&&d| d).count();
    Ok(ChainOutput {
        draws,
        energies,
        divergent,
        stats: ChainStats {
            step_size: step,
            inv_metric: ch.inv_metric,
            divergences,
            warmup_divergences,
            mean_accept: accept_sum / cfg.n_samples as f64,
        },
    })
}

/// Runs `cfg.n_chains` independent chains concurrently. Chain `c` uses
/// stream `c` of a ChaCha generator seeded with `cfg.seed`, so results do
/// not depend on thread scheduling.
pub fn sample<T: LogDensity + ?Sized>(
    target: &T,
    init: &Init,
    cfg: &SamplerConfig,
) -> Result<PosteriorDraws> {
    cfg.validate()?;
    let dim = target.dim();
    let outputs: Vec<Result<ChainOutput>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.n_chains)
            .map(|c| scope.spawn(move || run_chain(target, init, cfg, c)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sampler thread panicked"))
            .collect()
    });

    let mut draws = Vec::with_capacity(cfg.n_chains * cfg.n_samples * dim);
    let mut energies = Vec::with_capacity(cfg.n_chains * cfg.n_samples);
    let mut divergent = Vec::with_capacity(cfg.n_chains * cfg.n_samples);
    let mut chains = Vec::with_capacity(cfg.n_chains);
    for out in outputs {
        let out = out?;
        draws.extend(out.draws);
        energies.extend(out.energies);
        divergent.extend(out.divergent);
        chains.push(out.stats);
    }
    Ok(PosteriorDraws {
        n_chains: cfg.n_chains,
        n_samples: cfg.n_samples,
        dim,
        draws,
        energies,
        divergent,
        chains,
    })
}
