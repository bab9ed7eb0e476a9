//! Posterior curves at the ship, type and archetype layers, forecasts for
//! new ships and new engine types, and the type distance table.
//!
//! Every curve is computed draw by draw and only then summarized, so
//! original-scale intervals are quantiles of inverse-transformed draws.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::{curve, dot, BasisMatrix};
use crate::error::{Error, Result};
use crate::model::ParameterVector;
use crate::transform::PowerTransform;
use crate::workflow::FitArtifact;

pub const DEFAULT_LEVEL: f64 = 0.9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Transformed,
    Original,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Ship,
    Type,
    Archetype,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceMode {
    ExistingShip,
    NewShipKnownType,
    NewType,
    QualitativePrior,
}

/// How a new ship of a known type is forecast.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NewShipVariant {
    /// The type-level curve itself.
    #[default]
    PlugIn,
    /// A fresh ship drawn around the type curve for every posterior draw.
    Hierarchical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastOptions {
    /// Central credible level of the band.
    pub level: f64,
    pub scale: Scale,
    /// Adds observation noise to every draw (a predictive band).
    pub predictive: bool,
    /// Seeds the draws of new ships and types.
    pub seed: u64,
}

impl Default for ForecastOptions {
    fn default() -> Self {
        Self {
            level: DEFAULT_LEVEL,
            scale: Scale::Transformed,
            predictive: false,
            seed: 0,
        }
    }
}

impl ForecastOptions {
    fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Validation(format!(
                "credible level {} must lie in (0, 1)",
                self.level
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveInfo {
    pub label: String,
    pub layer: Layer,
    pub mode: SourceMode,
    pub scale: Scale,
    pub level: f64,
    pub predictive: bool,
    pub n_draws: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastCurve {
    pub info: CurveInfo,
    pub ages: Vec<usize>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Per-draw curves, one row per draw, one column per age.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveDraws {
    pub n_ages: usize,
    pub values: Vec<f64>,
}

impl CurveDraws {
    pub fn n_draws(&self) -> usize {
        self.values.len() / self.n_ages.max(1)
    }

    pub fn draw(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_ages..(i + 1) * self.n_ages]
    }

    pub fn column(&self, t: usize) -> Vec<f64> {
        self.values.iter().skip(t).step_by(self.n_ages).copied().collect()
    }

    /// Inverse-transforms every value.
    pub fn to_original(&self, tr: &PowerTransform) -> Result<Self> {
        Ok(Self {
            n_ages: self.n_ages,
            values: self.values.iter().map(|&v| tr.invert(v)).collect::<Result<_>>()?,
        })
    }
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean that is exact when every value is equal.
fn stable_mean(x: &[f64]) -> f64 {
    let m0 = x[0];
    m0 + x.iter().map(|v| v - m0).sum::<f64>() / x.len() as f64
}

impl ForecastCurve {
    /// Pointwise mean and central interval. `center` replaces the mean.
    pub fn summarize(draws: &CurveDraws, info: CurveInfo, center: Option<Vec<f64>>) -> Self {
        let t_max = draws.n_ages;
        let alpha = (1.0 - info.level) / 2.0;
        let mut mean = Vec::with_capacity(t_max);
        let mut lower = Vec::with_capacity(t_max);
        let mut upper = Vec::with_capacity(t_max);
        for t in 0..t_max {
            let mut col = draws.column(t);
            mean.push(stable_mean(&col));
            col.sort_by(f64::total_cmp);
            lower.push(quantile_sorted(&col, alpha));
            upper.push(quantile_sorted(&col, 1.0 - alpha));
        }
        Self {
            info,
            ages: (1..=t_max).collect(),
            mean: center.unwrap_or(mean),
            lower,
            upper,
        }
    }

    pub fn width(&self) -> Vec<f64> {
        self.upper.iter().zip(&self.lower).map(|(u, l)| u - l).collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("age,mean,lower,upper\n");
        for t in 0..self.ages.len() {
            out += &format!(
                "{},{},{},{}\n",
                self.ages[t], self.mean[t], self.lower[t], self.upper[t]
            );
        }
        out
    }

    /// Writes `<stem>.csv` and the `<stem>.json` sidecar.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv_string())?;
        std::fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&self.info)? + "\n",
        )?;
        Ok(())
    }
}

fn all_params(artifact: &FitArtifact) -> Result<Vec<ParameterVector>> {
    (0..artifact.draws.n_draws()).map(|i| artifact.params(i)).collect()
}

/// Curves `intercept_d + B·weights_d`, optionally with observation noise.
fn curves_from(
    bm: &BasisMatrix,
    params: &[ParameterVector],
    mut intercept_and_weights: impl FnMut(&ParameterVector) -> (f64, Vec<f64>),
    noise: Option<&mut ChaCha8Rng>,
) -> CurveDraws {
    let t_max = bm.n_ages();
    let mut values = Vec::with_capacity(params.len() * t_max);
    let mut noise = noise;
    for pv in params {
        let (a, w) = intercept_and_weights(pv);
        for t in 0..t_max {
            let mut v = a + dot(bm.row(t), &w);
            if let Some(rng) = noise.as_deref_mut() {
                let z: f64 = StandardNormal.sample(rng);
                v += pv.scales.y * z;
            }
            values.push(v);
        }
    }
    CurveDraws {
        n_ages: t_max,
        values,
    }
}

fn finish(
    artifact: &FitArtifact,
    draws: CurveDraws,
    info: CurveInfo,
    center: Option<Vec<f64>>,
) -> Result<ForecastCurve> {
    match info.scale {
        Scale::Transformed => Ok(ForecastCurve::summarize(&draws, info, center)),
        Scale::Original => {
            let tr = artifact.transform();
            let orig = draws.to_original(tr)?;
            let center = center
                .map(|c| c.iter().map(|&v| tr.invert(v)).collect::<Result<Vec<_>>>())
                .transpose()?;
            Ok(ForecastCurve::summarize(&orig, info, center))
        }
    }
}

fn info(label: &str, layer: Layer, mode: SourceMode, opts: &ForecastOptions, n: usize) -> CurveInfo {
    CurveInfo {
        label: label.to_string(),
        layer,
        mode,
        scale: opts.scale,
        level: opts.level,
        predictive: opts.predictive,
        n_draws: n,
    }
}

/// Per-draw curves `alpha_s + B·w_s` of an existing ship.
pub fn ship_curve_draws(
    artifact: &FitArtifact,
    ship: usize,
    opts: &ForecastOptions,
) -> Result<CurveDraws> {
    if ship >= artifact.layout().n_ships {
        return Err(Error::Index(format!(
            "ship index {ship} out of range for {} ships",
            artifact.layout().n_ships
        )));
    }
    let params = all_params(artifact)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    Ok(curves_from(
        artifact.basis(),
        &params,
        |pv| (pv.alpha[ship], pv.w_ship(ship).to_vec()),
        opts.predictive.then_some(&mut rng),
    ))
}

pub fn curve_for_ship(
    artifact: &FitArtifact,
    ship: usize,
    opts: &ForecastOptions,
) -> Result<ForecastCurve> {
    opts.validate()?;
    let draws = ship_curve_draws(artifact, ship, opts)?;
    let label = artifact.meta.ship_names[ship].clone();
    let n = draws.n_draws();
    finish(
        artifact,
        draws,
        info(&label, Layer::Ship, SourceMode::ExistingShip, opts, n),
        None,
    )
}

/// A new ship drawn around type `e` for every posterior draw:
/// `alpha ~ N(alpha_bar_e, sigma_alpha)`, `w ~ N(w_bar_e, sigma_w)`.
fn new_ship_draws(
    artifact: &FitArtifact,
    params: &[ParameterVector],
    e: usize,
    rng: &mut ChaCha8Rng,
    predictive: bool,
) -> CurveDraws {
    let mut noise_rng = rng.clone();
    noise_rng.set_stream(1);
    curves_from(
        artifact.basis(),
        params,
        |pv| {
            let z: f64 = StandardNormal.sample(rng);
            let a = pv.alpha_bar[e] + pv.scales.alpha * z;
            let w = pv
                .w_type(e)
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + pv.scales.w * z
                })
                .collect();
            (a, w)
        },
        predictive.then_some(&mut noise_rng),
    )
}

/// Per-draw curves for a new ship of a fitted type.
pub fn new_ship_curve_draws(
    artifact: &FitArtifact,
    engine_type: usize,
    variant: NewShipVariant,
    opts: &ForecastOptions,
) -> Result<CurveDraws> {
    if engine_type >= artifact.layout().n_types {
        return Err(Error::Index(format!(
            "type index {engine_type} out of range for {} types",
            artifact.layout().n_types
        )));
    }
    let params = all_params(artifact)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    Ok(match variant {
        NewShipVariant::PlugIn => {
            let mut noise_rng = rng;
            curves_from(
                artifact.basis(),
                &params,
                |pv| (pv.alpha_bar[engine_type], pv.w_type(engine_type).to_vec()),
                opts.predictive.then_some(&mut noise_rng),
            )
        }
        NewShipVariant::Hierarchical => {
            new_ship_draws(artifact, &params, engine_type, &mut rng, opts.predictive)
        }
    })
}

pub fn curve_for_new_ship(
    artifact: &FitArtifact,
    engine_type: usize,
    variant: NewShipVariant,
    opts: &ForecastOptions,
) -> Result<ForecastCurve> {
    opts.validate()?;
    let draws = new_ship_curve_draws(artifact, engine_type, variant, opts)?;
    let label = artifact.meta.type_names[engine_type].clone();
    let n = draws.n_draws();
    finish(
        artifact,
        draws,
        info(&label, Layer::Type, SourceMode::NewShipKnownType, opts, n),
        None,
    )
}

/// The archetype curve `alpha_bar_0 + B·w_bar_0`.
pub fn archetype_center(artifact: &FitArtifact) -> Result<Vec<f64>> {
    let hp = &artifact.meta.hyperparameters;
    curve(artifact.basis(), hp.mu_alpha_bar, &hp.mu_w_bar)
}

/// Per-draw curves for a ship of a new engine type: a type drawn around the
/// archetype, then a ship drawn around that type.
pub fn new_type_curve_draws(artifact: &FitArtifact, opts: &ForecastOptions) -> Result<CurveDraws> {
    let params = all_params(artifact)?;
    let hp = &artifact.meta.hyperparameters;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut noise_rng = rng.clone();
    noise_rng.set_stream(1);
    Ok(curves_from(
        artifact.basis(),
        &params,
        |pv| {
            let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
            let s = &pv.scales;
            let a = hp.mu_alpha_bar + s.alpha_bar * normal() + s.alpha * normal();
            let w = hp
                .mu_w_bar
                .iter()
                .map(|&m| m + s.w_bar * normal() + s.w * normal())
                .collect();
            (a, w)
        },
        opts.predictive.then_some(&mut noise_rng),
    ))
}

/// Forecast for an engine type absent from training. The centre is the
/// archetype curve; the band covers type-to-type and ship-to-ship spread.
pub fn curve_for_new_type(artifact: &FitArtifact, opts: &ForecastOptions) -> Result<ForecastCurve> {
    opts.validate()?;
    let draws = new_type_curve_draws(artifact, opts)?;
    let n = draws.n_draws();
    finish(
        artifact,
        draws,
        info("archetype", Layer::Archetype, SourceMode::NewType, opts, n),
        Some(archetype_center(artifact)?),
    )
}

/// A new ship of an unseen type judged similar to `donor_type`: the donor's
/// type posterior acts as the prior for the new ship.
pub fn curve_with_qualitative_prior(
    artifact: &FitArtifact,
    donor_type: usize,
    opts: &ForecastOptions,
) -> Result<ForecastCurve> {
    opts.validate()?;
    let draws = new_ship_curve_draws(artifact, donor_type, NewShipVariant::Hierarchical, opts)?;
    let label = artifact.meta.type_names[donor_type].clone();
    let n = draws.n_draws();
    finish(
        artifact,
        draws,
        info(&label, Layer::Ship, SourceMode::QualitativePrior, opts, n),
        None,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeDistance {
    pub type_a: String,
    pub type_b: String,
    pub distance: f64,
}

/// Euclidean distances between all unordered pairs of curves, ascending.
/// Ties keep pair order.
pub fn distance_table(names: &[String], curves: &[Vec<f64>]) -> Result<Vec<TypeDistance>> {
    if names.len() != curves.len() {
        return Err(Error::shape(names.len(), curves.len()));
    }
    if names.len() < 2 {
        return Err(Error::Validation("distances need at least two types".into()));
    }
    let mut out = Vec::new();
    for a in 0..names.len() {
        for b in a + 1..names.len() {
            if curves[a].len() != curves[b].len() {
                return Err(Error::shape(curves[a].len(), curves[b].len()));
            }
            let d = curves[a]
                .iter()
                .zip(&curves[b])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            out.push(TypeDistance {
                type_a: names[a].clone(),
                type_b: names[b].clone(),
                distance: d,
            });
        }
    }
    out.sort_by(|x, y| x.distance.total_cmp(&y.distance));
    Ok(out)
}

/// Posterior-mean type curves on the transformed scale.
pub fn type_mean_curves(artifact: &FitArtifact) -> Result<Vec<Vec<f64>>> {
    let opts = ForecastOptions::default();
    (0..artifact.layout().n_types)
        .map(|e| {
            let d = new_ship_curve_draws(artifact, e, NewShipVariant::PlugIn, &opts)?;
            Ok((0..d.n_ages).map(|t| stable_mean(&d.column(t))).collect())
        })
        .collect()
}

pub fn type_distance_table(artifact: &FitArtifact) -> Result<Vec<TypeDistance>> {
    distance_table(&artifact.meta.type_names, &type_mean_curves(artifact)?)
}

pub fn distances_csv(table: &[TypeDistance]) -> String {
    let mut out = String::from("type_a,type_b,distance\n");
    for d in table {
        out += &format!(
            "{},{},{}\n",
            crate::data::csv_field(&d.type_a),
            crate::data::csv_field(&d.type_b),
            d.distance
        );
    }
    out
}
