//! The fitting pipeline: transform, basis, prefit on the fleet-averaged
//! series, full hierarchical sampling, diagnostics, artifacts and posterior
//! predictive checks.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::{
    age_grid_basis, dot, make_uniform_knots, BasisMatrix, KnotVector, DEFAULT_DEGREE,
    DEFAULT_INTERIOR_KNOTS,
};
use crate::data::{csv_field, FleetRecords};
use crate::diagnostics::{Diagnostics, DiagnosticsSummary, E_BFMI_THRESHOLD, RHAT_THRESHOLD};
use crate::error::{Error, Result};
use crate::model::{
    normal_lpdf, FleetData, HierarchicalPosterior, ParamLayout, ParameterVector, Parameterization,
    Hyperparameters,
};
use crate::sampler::{sample, ChainStats, Init, LogDensity, PosteriorDraws, SamplerConfig};
use crate::transform::{fit_transform, PowerTransform};

/// Per-age mean of the (transformed) response over every observation at
/// that age. Ages without observations are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedSeries {
    pub mean: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

impl AveragedSeries {
    pub fn n_ages(&self) -> usize {
        self.mean.len()
    }

    /// `(age index, mean)` for the observed ages, age index 0-based.
    pub fn observed(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.mean.iter().enumerate().filter_map(|(t, m)| m.map(|m| (t, m)))
    }

    pub fn n_observed(&self) -> usize {
        self.mean.iter().filter(|m| m.is_some()).count()
    }
}

pub fn average_series(data: &FleetData) -> AveragedSeries {
    let t_max = data.n_ages();
    let mut sum = vec![0.0; t_max];
    let mut counts = vec![0usize; t_max];
    for (&age, &y) in data.age().iter().zip(data.y()) {
        sum[age - 1] += y;
        counts[age - 1] += 1;
    }
    let mean = sum
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    AveragedSeries { mean, counts }
}

/// Ordinary least squares of `y` on `x`; returns `(intercept, slope)`.
pub fn ols_line(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::shape(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData("a line needs two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateVariance("regressor is constant".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((my - slope * mx, slope))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefitResult {
    pub alpha_bar_0: f64,
    pub w_bar_0: Vec<f64>,
    pub sigma: f64,
    pub intercept_i: f64,
    pub averaged: AveragedSeries,
}

impl PrefitResult {
    pub fn hyperparameters(&self) -> Hyperparameters {
        Hyperparameters::new(self.alpha_bar_0, self.w_bar_0.clone())
    }
}

/// `y_avg(t) ~ N(alpha + B(t)·w, sigma)`, `alpha ~ N(I, 1)`, `w_k ~ N(0, 1)`,
/// `sigma ~ Exp(1)`, over `[alpha, w, log sigma]`.
struct PrefitPosterior<'a> {
    rows: Vec<usize>,
    y: Vec<f64>,
    basis: &'a BasisMatrix,
    intercept: f64,
}

impl LogDensity for PrefitPosterior<'_> {
    fn dim(&self) -> usize {
        self.basis.n_basis() + 2
    }

    fn log_density_and_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let k = self.basis.n_basis();
        let alpha = u[0];
        let w = &u[1..=k];
        let log_sigma = u[k + 1];
        let sigma = log_sigma.exp();
        let inv_var = 1.0 / (sigma * sigma);
        grad.fill(0.0);
        let mut lp = 0.0;
        let mut sq = 0.0;
        for (&t, &y) in self.rows.iter().zip(&self.y) {
            let row = self.basis.row(t);
            let r = y - alpha - dot(row, w);
            lp += normal_lpdf(y, y - r, sigma);
            sq += r * r;
            grad[0] += r * inv_var;
            for (g, b) in grad[1..=k].iter_mut().zip(row) {
                *g += r * inv_var * b;
            }
        }
        let n = self.rows.len() as f64;
        grad[k + 1] = -n + sq * inv_var;

        lp += normal_lpdf(alpha, self.intercept, 1.0);
        grad[0] -= alpha - self.intercept;
        for (g, &wk) in grad[1..=k].iter_mut().zip(w) {
            lp += normal_lpdf(wk, 0.0, 1.0);
            *g -= wk;
        }
        // Exp(1) on sigma plus the log-Jacobian of sigma = exp(log sigma)
        lp += -sigma + log_sigma;
        grad[k + 1] += -sigma + 1.0;
        lp
    }
}

/// Fits the archetype curve to the averaged series and returns posterior
/// means. Missing ages are skipped.
pub fn prefit(
    averaged: &AveragedSeries,
    basis: &BasisMatrix,
    cfg: &SamplerConfig,
) -> Result<PrefitResult> {
    if basis.n_ages() != averaged.n_ages() {
        return Err(Error::shape(averaged.n_ages(), basis.n_ages()));
    }
    let k = basis.n_basis();
    let (rows, y): (Vec<usize>, Vec<f64>) = averaged.observed().unzip();
    if rows.len() < k + 2 {
        return Err(Error::InsufficientData(format!(
            "prefit needs at least {} observed ages, found {}",
            k + 2,
            rows.len()
        )));
    }
    let ages: Vec<f64> = rows.iter().map(|&t| (t + 1) as f64).collect();
    let (intercept, _) = ols_line(&ages, &y)?;
    let target = PrefitPosterior {
        rows,
        y,
        basis,
        intercept,
    };
    let whitened = Whitened::new(&target)?;
    let draws = sample(&whitened, &Init::default(), cfg)?;
    let draws = draws.map_draws(|z| Ok(whitened.to_target(z)))?;
    let n = draws.n_draws() as f64;
    let mean = draws.mean();
    let sigma = draws.iter_draws().map(|d| d[k + 1].exp()).sum::<f64>() / n;
    Ok(PrefitResult {
        alpha_bar_0: mean[0],
        w_bar_0: mean[1..=k].to_vec(),
        sigma,
        intercept_i: intercept,
        averaged: averaged.clone(),
    })
}

/// The prefit posterior in coordinates `z` with `theta = m + L^-T z`, where
/// `L L^T` is the precision of `(alpha, w)` at a plug-in noise level. The
/// basis sums to one, so `alpha` and the weights trade off along a ridge
/// that only the priors pin down; whitening turns that ridge into a unit
/// direction the sampler can cross. `log sigma` passes through unchanged.
struct Whitened<'a> {
    target: &'a PrefitPosterior<'a>,
    mode: DVector<f64>,
    chol: DMatrix<f64>,
}

impl<'a> Whitened<'a> {
    fn new(target: &'a PrefitPosterior<'a>) -> Result<Self> {
        let k = target.basis.n_basis();
        let n = target.rows.len();
        let x = DMatrix::from_fn(n, k + 1, |i, j| {
            if j == 0 {
                1.0
            } else {
                target.basis.get(target.rows[i], j - 1)
            }
        });
        let y = DVector::from_column_slice(&target.y);
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * &y;
        let mut prior_mean = DVector::zeros(k + 1);
        prior_mean[0] = target.intercept;
        let identity = DMatrix::<f64>::identity(k + 1, k + 1);

        let mut var = 1.0;
        let mut solved = None;
        for _ in 0..4 {
            let precision = &xtx / var + &identity;
            let chol = precision.clone().cholesky().ok_or_else(|| {
                Error::DegenerateVariance("prefit precision is not positive definite".into())
            })?;
            let mode = chol.solve(&(&xty / var + &prior_mean));
            let rss = (&y - &x * &mode).norm_squared();
            var = (rss / n as f64).max(1e-12);
            solved = Some((mode, chol.l()));
        }
        let (mode, chol) = solved.expect("at least one iteration");
        Ok(Self { target, mode, chol })
    }

    fn to_target(&self, z: &[f64]) -> Vec<f64> {
        let k1 = self.mode.len();
        let zv = DVector::from_column_slice(&z[..k1]);
        let shift = self
            .chol
            .transpose()
            .solve_upper_triangular(&zv)
            .expect("Cholesky factor has a positive diagonal");
        let mut out: Vec<f64> = (&self.mode + shift).iter().copied().collect();
        out.push(z[k1]);
        out
    }
}

impl LogDensity for Whitened<'_> {
    fn dim(&self) -> usize {
        self.mode.len() + 1
    }

    fn log_density_and_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let k1 = self.mode.len();
        let theta = self.to_target(z);
        let lp = self.target.log_density_and_grad(&theta, grad);
        // d/dz = L^-1 d/dtheta
        let g = DVector::from_column_slice(&grad[..k1]);
        let gz = self
            .chol
            .solve_lower_triangular(&g)
            .expect("Cholesky factor has a positive diagonal");
        grad[..k1].copy_from_slice(gz.as_slice());
        lp
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub n_interior_knots: usize,
    pub degree: usize,
    /// Length of the age grid; the largest observed age when unset.
    pub lifecycle: Option<usize>,
    pub parameterization: Parameterization,
    pub init_radius: f64,
    pub sampler: SamplerConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_interior_knots: DEFAULT_INTERIOR_KNOTS,
            degree: DEFAULT_DEGREE,
            lifecycle: None,
            parameterization: Parameterization::NonCentered,
            init_radius: 1.0,
            sampler: SamplerConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn n_basis(&self) -> usize {
        self.n_interior_knots + self.degree + 1
    }

    /// Age grid length for `records` under this configuration.
    pub fn n_ages(&self, records: &FleetRecords) -> Result<usize> {
        let max_age = records.max_age();
        match self.lifecycle {
            Some(t) if t < max_age => Err(Error::Validation(format!(
                "observed age {max_age} exceeds the lifecycle {t}"
            ))),
            Some(t) => Ok(t),
            None => Ok(max_age),
        }
    }
}

/// Everything needed to forecast without refitting. `meta` is stored as
/// `meta.json`; draws are on the constrained scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub seed: u64,
    pub fingerprint: String,
    pub config: FitConfig,
    pub n_ages: usize,
    pub knots: KnotVector,
    pub basis: BasisMatrix,
    pub transform: PowerTransform,
    pub hyperparameters: Hyperparameters,
    pub prefit: PrefitResult,
    pub layout: ParamLayout,
    pub parameter_names: Vec<String>,
    pub ship_names: Vec<String>,
    pub type_names: Vec<String>,
    pub ship_to_type: Vec<usize>,
    pub chains: Vec<ChainStats>,
    pub diagnostics: DiagnosticsSummary,
    pub converged: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitArtifact {
    pub meta: ArtifactMeta,
    pub draws: PosteriorDraws,
    pub records: FleetRecords,
}

pub const META_FILE: &str = "meta.json";
pub const DRAWS_FILE: &str = "draws.csv";
pub const DATA_FILE: &str = "data.csv";

pub fn fit(records: &FleetRecords, cfg: &FitConfig) -> Result<FitArtifact> {
    cfg.sampler.validate()?;
    let n_ages = cfg.n_ages(records)?;
    let transform = fit_transform(&records.values())?;
    let data = records.to_fleet_data(n_ages, |v| transform.apply(v))?;

    let knots = make_uniform_knots(1.0, n_ages as f64, cfg.n_interior_knots, cfg.degree)?;
    let basis = age_grid_basis(&knots, n_ages)?;
    let averaged = average_series(&data);
    let prefit = prefit(&averaged, &basis, &cfg.sampler)?;
    let hp = prefit.hyperparameters();

    let posterior = HierarchicalPosterior::new(&data, &basis, &hp, cfg.parameterization)?;
    let raw = sample(
        &posterior,
        &Init::Uniform {
            radius: cfg.init_radius,
        },
        &cfg.sampler,
    )?;
    let draws = raw.map_draws(|u| Ok(posterior.to_params(u)?.to_flat()))?;
    let diagnostics = Diagnostics::compute(&draws);
    let layout = posterior.layout();
    let names = layout.names();
    let warnings = diagnostic_warnings(&diagnostics, &names);
    for w in &warnings {
        log::warn!("{w}");
    }

    Ok(FitArtifact {
        meta: ArtifactMeta {
            seed: cfg.sampler.seed,
            fingerprint: records.fingerprint(),
            config: cfg.clone(),
            n_ages,
            knots,
            basis,
            transform,
            hyperparameters: hp,
            prefit,
            layout,
            parameter_names: names,
            ship_names: data.ship_names().to_vec(),
            type_names: data.type_names().to_vec(),
            ship_to_type: data.ship_to_type().to_vec(),
            chains: draws.chains.clone(),
            converged: diagnostics.converged(),
            diagnostics: diagnostics.summary(),
            warnings,
        },
        draws,
        records: records.clone(),
    })
}

fn diagnostic_warnings(d: &Diagnostics, names: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let bad = d.unconverged(RHAT_THRESHOLD);
    if !bad.is_empty() {
        let worst = bad
            .iter()
            .copied()
            .max_by(|&a, &b| d.rhat[a].total_cmp(&d.rhat[b]))
            .expect("non-empty");
        out.push(format!(
            "{} parameters have R-hat above {RHAT_THRESHOLD}; worst is {} at {:.4}",
            bad.len(),
            names[worst],
            d.rhat[worst]
        ));
    }
    for c in d.low_bfmi_chains() {
        out.push(format!(
            "chain {} has E-BFMI {:.3} below {E_BFMI_THRESHOLD}",
            c + 1,
            d.e_bfmi[c]
        ));
    }
    let div = d.total_divergent();
    if div > 0 {
        out.push(format!("{div} divergent transitions after warmup"));
    }
    out
}

impl FitArtifact {
    pub fn n_ages(&self) -> usize {
        self.meta.n_ages
    }

    pub fn basis(&self) -> &BasisMatrix {
        &self.meta.basis
    }

    pub fn transform(&self) -> &PowerTransform {
        &self.meta.transform
    }

    pub fn layout(&self) -> ParamLayout {
        self.meta.layout
    }

    pub fn ship_index(&self, ship_id: &str) -> Result<usize> {
        self.meta
            .ship_names
            .iter()
            .position(|s| s == ship_id)
            .ok_or_else(|| Error::Index(format!("unknown ship '{ship_id}'")))
    }

    pub fn type_index(&self, engine_type: &str) -> Result<usize> {
        self.meta
            .type_names
            .iter()
            .position(|s| s == engine_type)
            .ok_or_else(|| Error::Index(format!("unknown engine type '{engine_type}'")))
    }

    /// Draw `i` (flat across chains) as structured parameters.
    pub fn params(&self, i: usize) -> Result<ParameterVector> {
        ParameterVector::from_flat(self.meta.layout, self.draws.flat_draw(i))
    }

    /// The training panel on the transformed scale, indexed as at fit time.
    pub fn training_data(&self) -> Result<FleetData> {
        let tr = self.meta.transform;
        self.records.to_fleet_data(self.meta.n_ages, |v| tr.apply(v))
    }

    pub fn diagnostics(&self) -> Diagnostics {
        Diagnostics::compute(&self.draws)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let meta = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(dir.join(META_FILE), meta + "\n")?;
        self.records.write_csv(dir.join(DATA_FILE))?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(DRAWS_FILE))?);
        f.write_all(self.draws_csv_header().as_bytes())?;
        let mut line = String::new();
        for c in 0..self.draws.n_chains {
            for i in 0..self.draws.n_samples {
                let flat = c * self.draws.n_samples + i;
                line.clear();
                let _ = write!(
                    line,
                    "{},{},{},{}",
                    c + 1,
                    i + 1,
                    self.draws.energies[flat],
                    u8::from(self.draws.divergent[flat])
                );
                for v in self.draws.draw(c, i) {
                    let _ = write!(line, ",{v}");
                }
                line.push('\n');
                f.write_all(line.as_bytes())?;
            }
        }
        f.flush()?;
        Ok(())
    }

    fn draws_csv_header(&self) -> String {
        let mut h = String::from("chain,iteration,energy,divergent");
        for n in &self.meta.parameter_names {
            h.push(',');
            h.push_str(&csv_field(n));
        }
        h.push('\n');
        h
    }

    /// Loads an artifact and checks it against its stored data and draws.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            std::fs::read_to_string(dir.join(name)).map_err(|e| {
                Error::Artifact(format!("cannot read {}: {e}", dir.join(name).display()))
            })
        };
        let meta: ArtifactMeta = serde_json::from_str(&read(META_FILE)?)?;
        let records = FleetRecords::from_reader(read(DATA_FILE)?.as_bytes())?;
        if records.fingerprint() != meta.fingerprint {
            return Err(Error::Artifact(
                "data fingerprint does not match the stored input".into(),
            ));
        }

        let n_chains = meta.config.sampler.n_chains;
        let n_samples = meta.config.sampler.n_samples;
        let dim = meta.layout.dim();
        let draws_text = read(DRAWS_FILE)?;
        let mut rdr = csv::Reader::from_reader(draws_text.as_bytes());
        if rdr.headers()?.len() != dim + 4 {
            return Err(Error::Artifact(format!(
                "draws.csv has {} columns, expected {}",
                rdr.headers()?.len(),
                dim + 4
            )));
        }
        let mut draws = Vec::with_capacity(n_chains * n_samples * dim);
        let mut energies = Vec::with_capacity(n_chains * n_samples);
        let mut divergent = Vec::with_capacity(n_chains * n_samples);
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Artifact(format!("bad number '{s}' in draws.csv")))
        };
        for row in rdr.records() {
            let row = row?;
            energies.push(num(&row[2])?);
            divergent.push(&row[3] == "1");
            for v in row.iter().skip(4) {
                draws.push(num(v)?);
            }
        }
        if energies.len() != n_chains * n_samples {
            return Err(Error::Artifact(format!(
                "draws.csv has {} rows, expected {}",
                energies.len(),
                n_chains * n_samples
            )));
        }
        let draws = PosteriorDraws {
            n_chains,
            n_samples,
            dim,
            draws,
            energies,
            divergent,
            chains: meta.chains.clone(),
        };
        if Diagnostics::compute(&draws).summary() != meta.diagnostics {
            return Err(Error::Artifact(
                "stored diagnostics do not match the stored draws".into(),
            ));
        }
        Ok(Self {
            meta,
            draws,
            records,
        })
    }
}

pub const DEFAULT_PPC_REPLICATES: usize = 200;
pub const PPC_MIN_DRAWS: usize = 100;
pub const PPC_STATISTICS: [&str; 5] = ["mean", "sd", "min", "max", "lag1_autocorrelation"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcStatistic {
    pub name: String,
    pub observed: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcSummary {
    pub n_replicates: usize,
    pub statistics: Vec<PpcStatistic>,
}

/// Summary statistics of the observed ages of an averaged series, in the
/// order of [`PPC_STATISTICS`].
pub fn series_statistics(averaged: &AveragedSeries) -> [f64; 5] {
    let x: Vec<f64> = averaged.observed().map(|(_, m)| m).collect();
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = (ss / n).sqrt();
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lag: f64 = x.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    let acf = if ss > 0.0 { lag / ss } else { 0.0 };
    [mean, sd, min, max, acf]
}

/// Posterior predictive p-values of the averaged-series statistics. Each
/// replicate takes one posterior draw (evenly spaced over the stored draws)
/// and redraws observation noise at the observed (ship, age) cells. Ties
/// count one half.
pub fn posterior_predictive_check(
    artifact: &FitArtifact,
    data: &FleetData,
    n_replicates: usize,
    seed: u64,
) -> Result<PpcSummary> {
    let n_draws = artifact.draws.n_draws();
    if n_draws < PPC_MIN_DRAWS {
        return Err(Error::Validation(format!(
            "posterior predictive checks need at least {PPC_MIN_DRAWS} draws, artifact has {n_draws}"
        )));
    }
    if n_replicates == 0 {
        return Err(Error::Validation("at least one replicate is required".into()));
    }
    if data.n_ships() != artifact.layout().n_ships || data.n_ages() != artifact.n_ages() {
        return Err(Error::Validation(
            "data panel does not match the artifact".into(),
        ));
    }
    let observed = series_statistics(&average_series(data));
    let bm = artifact.basis();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut below = [0.0f64; 5];
    let mut y_rep = vec![0.0; data.n_obs()];
    for m in 0..n_replicates {
        let pv = artifact.params(m * n_draws / n_replicates)?;
        for (i, y) in y_rep.iter_mut().enumerate() {
            let s = data.ship()[i];
            let mu = pv.alpha[s] + dot(bm.row(data.age()[i] - 1), pv.w_ship(s));
            let z: f64 = StandardNormal.sample(&mut rng);
            *y = mu + pv.scales.y * z;
        }
        let rep = series_statistics(&average_series(&data.with_response(y_rep.clone())?));
        for j in 0..5 {
            if rep[j] < observed[j] {
                below[j] += 1.0;
            } else if rep[j] == observed[j] {
                below[j] += 0.5;
            }
        }
    }
    Ok(PpcSummary {
        n_replicates,
        statistics: PPC_STATISTICS
            .iter()
            .zip(observed)
            .zip(below)
            .map(|((name, obs), b)| PpcStatistic {
                name: name.to_string(),
                observed: obs,
                p_value: b / n_replicates as f64,
            })
            .collect(),
    })
}
