//! RMSE reports, cross-validation, pooling baselines and knot sweeps.
//!
//! Scores are computed on the transformed, standardized scale of the
//! transform fitted to each fold's training data.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::{age_grid_basis, curve, make_uniform_knots, BasisMatrix};
use crate::data::{csv_field, FleetRecords, Record};
use crate::error::{Error, Result};
use crate::forecast::{archetype_center, curve_for_new_ship, ForecastOptions, NewShipVariant};
use crate::transform::{fit_transform, PowerTransform};
use crate::workflow::{fit, FitArtifact, FitConfig};

pub const HIERARCHICAL: &str = "hierarchical";
pub const NO_POOLING: &str = "no_pooling";
pub const NO_POOLING_MEAN: &str = "no_pooling_mean";
pub const COMPLETE_POOLING: &str = "complete_pooling";

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() {
        return Err(Error::shape(actual.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(Error::shape(1, 0));
    }
    let ss: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

fn rmse_of_residuals(r: &[f64]) -> f64 {
    (r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64).sqrt()
}

/// One scored held-out observation with every method's prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredObs {
    pub ship_id: String,
    pub engine_type: String,
    pub age: usize,
    pub actual: f64,
    /// Prediction per method name.
    pub predictions: BTreeMap<String, f64>,
}

impl ScoredObs {
    pub fn residual(&self, method: &str) -> Option<f64> {
        self.predictions.get(method).map(|p| p - self.actual)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedRmse {
    pub name: String,
    pub rmse: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub per_ship: Vec<NamedRmse>,
    pub per_type: Vec<NamedRmse>,
    /// RMSE of all residuals pooled; `None` for an empty report.
    pub overall: Option<f64>,
    pub baselines: Vec<NamedRmse>,
    pub warnings: Vec<String>,
}

fn grouped(
    obs: &[ScoredObs],
    method: &str,
    key: impl Fn(&ScoredObs) -> &str,
) -> Vec<NamedRmse> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for o in obs {
        if let Some(r) = o.residual(method) {
            let k = key(o).to_string();
            if !groups.contains_key(&k) {
                order.push(k.clone());
            }
            groups.entry(k).or_default().push(r);
        }
    }
    order
        .into_iter()
        .map(|k| {
            let r = &groups[&k];
            NamedRmse {
                rmse: rmse_of_residuals(r),
                n: r.len(),
                name: k,
            }
        })
        .collect()
}

impl EvalReport {
    /// Scores `method` per ship, per type and overall, and every other
    /// method present in the predictions as an overall baseline.
    pub fn from_scored(obs: &[ScoredObs], method: &str) -> Self {
        let residuals: Vec<f64> = obs.iter().filter_map(|o| o.residual(method)).collect();
        let mut names: Vec<&str> = obs
            .iter()
            .flat_map(|o| o.predictions.keys().map(String::as_str))
            .filter(|m| *m != method)
            .collect();
        names.sort_unstable();
        names.dedup();
        let baselines = names
            .into_iter()
            .map(|m| {
                let r: Vec<f64> = obs.iter().filter_map(|o| o.residual(m)).collect();
                NamedRmse {
                    name: m.to_string(),
                    rmse: rmse_of_residuals(&r),
                    n: r.len(),
                }
            })
            .collect();
        Self {
            method: method.to_string(),
            per_ship: grouped(obs, method, |o| &o.ship_id),
            per_type: grouped(obs, method, |o| &o.engine_type),
            overall: (!residuals.is_empty()).then(|| rmse_of_residuals(&residuals)),
            baselines,
            warnings: Vec::new(),
        }
    }

    /// Unweighted mean of the per-type RMSEs.
    pub fn mean_of_types(&self) -> Option<f64> {
        (!self.per_type.is_empty())
            .then(|| self.per_type.iter().map(|r| r.rmse).sum::<f64>() / self.per_type.len() as f64)
    }

    pub fn baseline(&self, name: &str) -> Option<f64> {
        self.baselines.iter().find(|b| b.name == name).map(|b| b.rmse)
    }

    /// Rows `scope,name,rmse`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("scope,name,rmse\n");
        let mut row = |scope: &str, name: &str, v: f64| {
            out += &format!("{scope},{},{v}\n", csv_field(name));
        };
        for r in &self.per_ship {
            row("ship", &r.name, r.rmse);
        }
        for r in &self.per_type {
            row("type", &r.name, r.rmse);
        }
        if let Some(m) = self.mean_of_types() {
            row("mean", "types", m);
        }
        if let Some(o) = self.overall {
            row("overall", &self.method, o);
        }
        for b in &self.baselines {
            row("baseline", &b.name, b.rmse);
        }
        out
    }

    /// Per-type rows, their mean, the pooled overall value and baselines.
    pub fn to_table(&self) -> String {
        let width = self
            .per_type
            .iter()
            .map(|r| r.name.len())
            .chain(self.baselines.iter().map(|b| b.name.len()))
            .chain([16])
            .max()
            .unwrap_or(16);
        let mut out = format!("{:<width$}  {:>8}  {:>6}\n", "type", "rmse", "n");
        for r in &self.per_type {
            out += &format!("{:<width$}  {:>8.4}  {:>6}\n", r.name, r.rmse, r.n);
        }
        if let Some(m) = self.mean_of_types() {
            out += &format!("{:<width$}  {m:>8.4}\n", "mean");
        }
        if let Some(o) = self.overall {
            out += &format!("{:<width$}  {o:>8.4}\n", "overall (pooled)");
        }
        if !self.baselines.is_empty() {
            out += &format!("\n{:<width$}  {:>8}\n", "baseline", "rmse");
            for b in &self.baselines {
                out += &format!("{:<width$}  {:>8.4}\n", b.name, b.rmse);
            }
        }
        out
    }
}

/// Stable per-fold seed from the run seed and a label.
pub fn fold_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub fit: FitConfig,
    pub n_folds: usize,
    pub ridge_penalty: f64,
    /// Ships with at most this many observations count as sparse.
    pub sparse_max_obs: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            n_folds: 2,
            ridge_penalty: 1.0,
            sparse_max_obs: 5,
        }
    }
}

/// Plain least squares is used only below this condition number.
pub const MAX_CONDITION: f64 = 1e8;

/// Least-squares spline weights (the intercept is absorbed because the
/// basis sums to one). Falls back to ridge when the system is
/// under-determined or singular; the flag reports the fallback.
pub fn spline_least_squares(
    bm: &BasisMatrix,
    ages: &[usize],
    y: &[f64],
    ridge_penalty: f64,
) -> Result<(Vec<f64>, bool)> {
    if ages.len() != y.len() {
        return Err(Error::shape(ages.len(), y.len()));
    }
    if ages.is_empty() {
        return Err(Error::InsufficientData("no observations to fit".into()));
    }
    let k = bm.n_basis();
    let x = DMatrix::from_fn(ages.len(), k, |i, j| bm.get(ages[i] - 1, j));
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * DVector::from_column_slice(y);
    if ages.len() >= k + 2 {
        let eig = xtx.clone().symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        if lo > MAX_CONDITION.recip() * hi {
            if let Some(chol) = xtx.clone().cholesky() {
                return Ok((chol.solve(&xty).iter().copied().collect(), false));
            }
        }
    }
    let ridge = xtx + DMatrix::identity(k, k) * ridge_penalty;
    let v = ridge
        .cholesky()
        .ok_or_else(|| Error::DegenerateVariance("ridge system is singular".into()))?
        .solve(&xty);
    Ok((v.iter().copied().collect(), true))
}

/// Basis and transformed responses of a training set, mirroring `fit`.
struct FoldFrame {
    transform: PowerTransform,
    basis: BasisMatrix,
}

impl FoldFrame {
    fn new(train: &FleetRecords, cfg: &FitConfig) -> Result<Self> {
        let n_ages = cfg.n_ages(train)?;
        let transform = fit_transform(&train.values())?;
        let knots = make_uniform_knots(1.0, n_ages as f64, cfg.n_interior_knots, cfg.degree)?;
        Ok(Self {
            transform,
            basis: age_grid_basis(&knots, n_ages)?,
        })
    }

    fn fit_records(&self, records: &[&Record], ridge: f64) -> Result<(Vec<f64>, bool)> {
        let ages: Vec<usize> = records.iter().map(|r| r.age).collect();
        let y: Vec<f64> = records.iter().map(|r| self.transform.apply(r.failure_rate)).collect();
        spline_least_squares(&self.basis, &ages, &y, ridge)
    }

    fn curve(&self, weights: &[f64]) -> Result<Vec<f64>> {
        curve(&self.basis, 0.0, weights)
    }
}

/// Independent per-ship curves of every ship in `train`, in ship order.
fn no_pooling_curves(
    frame: &FoldFrame,
    train: &FleetRecords,
    ridge: f64,
) -> Result<Vec<(String, Vec<f64>, bool)>> {
    train
        .ship_ids()
        .into_iter()
        .map(|s| {
            let rows: Vec<&Record> = train.records().iter().filter(|r| r.ship_id == s).collect();
            let (w, flagged) = frame.fit_records(&rows, ridge)?;
            Ok((s, frame.curve(&w)?, flagged))
        })
        .collect()
}

fn complete_pooling_curve(frame: &FoldFrame, train: &FleetRecords, ridge: f64) -> Result<Vec<f64>> {
    let rows: Vec<&Record> = train.records().iter().collect();
    let (w, _) = frame.fit_records(&rows, ridge)?;
    frame.curve(&w)
}

fn mean_curve<'a>(curves: impl Iterator<Item = &'a Vec<f64>>) -> Option<Vec<f64>> {
    let mut sum: Option<Vec<f64>> = None;
    let mut n = 0.0;
    for c in curves {
        let s = sum.get_or_insert_with(|| vec![0.0; c.len()]);
        s.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        n += 1.0;
    }
    sum.map(|s| s.into_iter().map(|v| v / n).collect())
}

fn fold_config(cfg: &FitConfig, n_ages: usize, seed: u64) -> FitConfig {
    let mut c = cfg.clone();
    c.lifecycle = Some(n_ages);
    c.sampler.seed = seed;
    c
}

/// Result of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub label: String,
    pub seed: u64,
    pub train_fingerprint: String,
    pub n_train: usize,
    pub n_test: usize,
    pub converged: bool,
    pub ridge_fallbacks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub scored: Vec<ScoredObs>,
    pub folds: Vec<FoldSummary>,
    pub warnings: Vec<String>,
}

impl CvResult {
    pub fn report(&self) -> EvalReport {
        let mut r = EvalReport::from_scored(&self.scored, HIERARCHICAL);
        r.warnings = self.warnings.clone();
        r
    }

    /// Pooled RMSE of `method` over observations whose ship passes `keep`.
    pub fn rmse_where(&self, method: &str, keep: impl Fn(&ScoredObs) -> bool) -> Option<f64> {
        let r: Vec<f64> = self
            .scored
            .iter()
            .filter(|o| keep(o))
            .filter_map(|o| o.residual(method))
            .collect();
        (!r.is_empty()).then(|| rmse_of_residuals(&r))
    }
}

/// Leave-one-ship-out: each ship is refitted out and predicted from its
/// type-level curve. Ships that are the only member of their type are
/// skipped with a warning. Baselines: the type mean of independent per-ship
/// fits and a single global curve.
pub fn loo_ship_cv(records: &FleetRecords, cfg: &CvConfig) -> Result<CvResult> {
    let n_ages = cfg.fit.n_ages(records)?;
    let mut out = CvResult {
        scored: Vec::new(),
        folds: Vec::new(),
        warnings: Vec::new(),
    };
    for ship in records.ship_ids() {
        let engine_type = records.type_of(&ship).expect("ship has records").to_string();
        let train = records.without_ship(&ship);
        if !train.type_ids().contains(&engine_type) {
            let w = format!("ship {ship} skipped: type {engine_type} has no other ship");
            log::warn!("{w}");
            out.warnings.push(w);
            continue;
        }
        let test = records.only_ship(&ship);
        let seed = fold_seed(cfg.fit.sampler.seed, &ship);
        let art = fit(&train, &fold_config(&cfg.fit, n_ages, seed))?;
        let frame = FoldFrame::new(&train, &art.meta.config)?;
        let e = art.type_index(&engine_type)?;
        let hier = curve_for_new_ship(&art, e, NewShipVariant::PlugIn, &ForecastOptions::default())?;
        let np = no_pooling_curves(&frame, &train, cfg.ridge_penalty)?;
        let np_type = mean_curve(
            np.iter()
                .filter(|(s, _, _)| train.type_of(s) == Some(engine_type.as_str()))
                .map(|(_, c, _)| c),
        )
        .expect("type has a training ship");
        let cp = complete_pooling_curve(&frame, &train, cfg.ridge_penalty)?;
        for r in test.records() {
            let t = r.age - 1;
            out.scored.push(ScoredObs {
                ship_id: ship.clone(),
                engine_type: engine_type.clone(),
                age: r.age,
                actual: art.transform().apply(r.failure_rate),
                predictions: BTreeMap::from([
                    (HIERARCHICAL.to_string(), hier.mean[t]),
                    (NO_POOLING_MEAN.to_string(), np_type[t]),
                    (COMPLETE_POOLING.to_string(), cp[t]),
                ]),
            });
        }
        out.folds.push(fold_summary(&ship, seed, &train, &test, &art, &np));
    }
    Ok(out)
}

fn fold_summary(
    label: &str,
    seed: u64,
    train: &FleetRecords,
    test: &FleetRecords,
    art: &FitArtifact,
    np: &[(String, Vec<f64>, bool)],
) -> FoldSummary {
    FoldSummary {
        label: label.to_string(),
        seed,
        train_fingerprint: train.fingerprint(),
        n_train: train.len(),
        n_test: test.len(),
        converged: art.meta.converged,
        ridge_fallbacks: np.iter().filter(|x| x.2).map(|x| x.0.clone()).collect(),
    }
}

/// Assigns every observation to one of `n_folds` folds. Each ship's rows
/// are shuffled with a ship-specific seed and dealt round-robin; a ship's
/// only training row is never held out.
pub fn assign_folds(records: &FleetRecords, n_folds: usize, seed: u64) -> Result<Vec<Option<usize>>> {
    if n_folds < 2 {
        return Err(Error::Validation("cross-validation needs at least 2 folds".into()));
    }
    let mut fold = vec![None; records.len()];
    for ship in records.ship_ids() {
        let mut rows: Vec<usize> = (0..records.len())
            .filter(|&i| records.records()[i].ship_id == ship)
            .collect();
        if rows.len() < 2 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(fold_seed(seed, &ship));
        rows.shuffle(&mut rng);
        for (pos, &i) in rows.iter().enumerate() {
            let f = pos % n_folds;
            // with no more rows than folds, one row would otherwise be the
            // ship's only training row in some fold
            if pos == 0 && rows.len() <= n_folds {
                continue;
            }
            fold[i] = Some(f);
        }
    }
    Ok(fold)
}

/// Observation-level K-fold cross-validation of the hierarchical fit
/// against no pooling (independent per-ship curves) and complete pooling
/// (one global curve).
pub fn holdout_cv(records: &FleetRecords, cfg: &CvConfig) -> Result<CvResult> {
    let n_ages = cfg.fit.n_ages(records)?;
    let folds = assign_folds(records, cfg.n_folds, cfg.fit.sampler.seed)?;
    let mut out = CvResult {
        scored: Vec::new(),
        folds: Vec::new(),
        warnings: Vec::new(),
    };
    for f in 0..cfg.n_folds {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (r, fo) in records.records().iter().zip(&folds) {
            if *fo == Some(f) {
                test.push(r.clone());
            } else {
                train.push(r.clone());
            }
        }
        if test.is_empty() {
            continue;
        }
        let train = FleetRecords::new(train)?;
        let test = FleetRecords::new(test)?;
        let label = format!("fold{}", f + 1);
        let seed = fold_seed(cfg.fit.sampler.seed, &label);
        let art = fit(&train, &fold_config(&cfg.fit, n_ages, seed))?;
        if !art.meta.converged {
            out.warnings.push(format!("{label}: fit did not converge"));
        }
        let frame = FoldFrame::new(&train, &art.meta.config)?;
        let ship_curves = posterior_mean_ship_curves(&art)?;
        let np = no_pooling_curves(&frame, &train, cfg.ridge_penalty)?;
        let cp = complete_pooling_curve(&frame, &train, cfg.ridge_penalty)?;
        for r in test.records() {
            let s = art.ship_index(&r.ship_id)?;
            let t = r.age - 1;
            let np_curve = &np.iter().find(|x| x.0 == r.ship_id).expect("ship in training").1;
            out.scored.push(ScoredObs {
                ship_id: r.ship_id.clone(),
                engine_type: r.engine_type.clone(),
                age: r.age,
                actual: art.transform().apply(r.failure_rate),
                predictions: BTreeMap::from([
                    (HIERARCHICAL.to_string(), ship_curves[s][t]),
                    (NO_POOLING.to_string(), np_curve[t]),
                    (COMPLETE_POOLING.to_string(), cp[t]),
                ]),
            });
        }
        out.folds.push(fold_summary(&label, seed, &train, &test, &art, &np));
    }
    Ok(out)
}

/// Posterior mean of `alpha_s + B·w_s` for every ship.
pub fn posterior_mean_ship_curves(art: &FitArtifact) -> Result<Vec<Vec<f64>>> {
    let l = art.layout();
    let bm = art.basis();
    let mut out = vec![vec![0.0; art.n_ages()]; l.n_ships];
    let n = art.draws.n_draws();
    for i in 0..n {
        let pv = art.params(i)?;
        for (s, c) in out.iter_mut().enumerate() {
            let ws = pv.w_ship(s);
            for (t, v) in c.iter_mut().enumerate() {
                *v += pv.alpha[s] + crate::basis::dot(bm.row(t), ws);
            }
        }
    }
    for c in &mut out {
        c.iter_mut().for_each(|v| *v /= n as f64);
    }
    Ok(out)
}

/// Scores the posterior mean curve of every ship in `records` against its
/// observations. Ships must belong to the fit.
pub fn score_artifact(art: &FitArtifact, records: &FleetRecords) -> Result<EvalReport> {
    let curves = posterior_mean_ship_curves(art)?;
    let scored = records
        .records()
        .iter()
        .map(|r| {
            let s = art.ship_index(&r.ship_id)?;
            if r.age > art.n_ages() {
                return Err(Error::Index(format!(
                    "age {} of ship '{}' beyond the fitted lifecycle of {}",
                    r.age,
                    r.ship_id,
                    art.n_ages()
                )));
            }
            Ok(ScoredObs {
                ship_id: r.ship_id.clone(),
                engine_type: r.engine_type.clone(),
                age: r.age,
                actual: art.transform().apply(r.failure_rate),
                predictions: BTreeMap::from([(HIERARCHICAL.to_string(), curves[s][r.age - 1])]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_scored(&scored, HIERARCHICAL))
}

/// Scored observations as CSV, one column per method.
pub fn scored_csv(obs: &[ScoredObs]) -> String {
    let mut methods: Vec<&str> = obs
        .iter()
        .flat_map(|o| o.predictions.keys().map(String::as_str))
        .collect();
    methods.sort_unstable();
    methods.dedup();
    let mut out = String::from("ship_id,engine_type,age,actual");
    for m in &methods {
        out += &format!(",{m}");
    }
    out.push('\n');
    for o in obs {
        out += &format!(
            "{},{},{},{}",
            csv_field(&o.ship_id),
            csv_field(&o.engine_type),
            o.age,
            o.actual
        );
        for m in &methods {
            match o.predictions.get(*m) {
                Some(v) => out += &format!(",{v}"),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Hierarchical vs baseline RMSEs under holdout CV, overall and for sparse
/// ships (at most `sparse_max_obs` observations in the full data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolingComparison {
    pub overall: BTreeMap<String, f64>,
    pub sparse: BTreeMap<String, f64>,
    pub sparse_ships: Vec<String>,
    pub cv: CvResult,
}

pub fn pooling_baselines(records: &FleetRecords, cfg: &CvConfig) -> Result<PoolingComparison> {
    let cv = holdout_cv(records, cfg)?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records.records() {
        *counts.entry(r.ship_id.as_str()).or_default() += 1;
    }
    let sparse_ships: Vec<String> = records
        .ship_ids()
        .into_iter()
        .filter(|s| counts[s.as_str()] <= cfg.sparse_max_obs)
        .collect();
    let mut overall = BTreeMap::new();
    let mut sparse = BTreeMap::new();
    for m in [HIERARCHICAL, NO_POOLING, COMPLETE_POOLING] {
        if let Some(v) = cv.rmse_where(m, |_| true) {
            overall.insert(m.to_string(), v);
        }
        if let Some(v) = cv.rmse_where(m, |o| sparse_ships.contains(&o.ship_id)) {
            sparse.insert(m.to_string(), v);
        }
    }
    Ok(PoolingComparison {
        overall,
        sparse,
        sparse_ships,
        cv,
    })
}

/// Fits on `train` and forecasts every series of `test` (engine types not
/// seen in training) with the archetype curve. Baselines: the mean of
/// independent per-ship curves and a single global curve, both fitted on
/// `train`.
pub fn new_type_eval(train: &FleetRecords, test: &FleetRecords, cfg: &FitConfig) -> Result<EvalReport> {
    let train_types = train.type_ids();
    if let Some(t) = test.type_ids().iter().find(|t| train_types.contains(t)) {
        return Err(Error::Validation(format!(
            "test type '{t}' also appears in the training data"
        )));
    }
    if test.is_empty() {
        return Ok(EvalReport {
            method: HIERARCHICAL.to_string(),
            ..EvalReport::default()
        });
    }
    let mut fit_cfg = cfg.clone();
    let n_ages = cfg.n_ages(train)?.max(test.max_age());
    fit_cfg.lifecycle = Some(n_ages);
    let art = fit(train, &fit_cfg)?;
    let frame = FoldFrame::new(train, &art.meta.config)?;
    let center = archetype_center(&art)?;
    let np = no_pooling_curves(&frame, train, 1.0)?;
    let np_mean = mean_curve(np.iter().map(|x| &x.1)).expect("training data has ships");
    let cp = complete_pooling_curve(&frame, train, 1.0)?;
    let scored: Vec<ScoredObs> = test
        .records()
        .iter()
        .map(|r| {
            let t = r.age - 1;
            ScoredObs {
                ship_id: r.ship_id.clone(),
                engine_type: r.engine_type.clone(),
                age: r.age,
                actual: art.transform().apply(r.failure_rate),
                predictions: BTreeMap::from([
                    (HIERARCHICAL.to_string(), center[t]),
                    (NO_POOLING_MEAN.to_string(), np_mean[t]),
                    (COMPLETE_POOLING.to_string(), cp[t]),
                ]),
            }
        })
        .collect();
    let mut report = EvalReport::from_scored(&scored, HIERARCHICAL);
    if !art.meta.converged {
        report.warnings.push("training fit did not converge".into());
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotSweepRow {
    pub n_interior_knots: usize,
    /// `None` when the candidate was infeasible and skipped.
    pub cv_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotSweep {
    pub rows: Vec<KnotSweepRow>,
    pub best: Option<usize>,
    pub warnings: Vec<String>,
}

impl KnotSweep {
    /// Smallest RMSE; ties go to fewer knots.
    pub fn from_rows(rows: Vec<KnotSweepRow>, warnings: Vec<String>) -> Self {
        let best = rows
            .iter()
            .filter_map(|r| r.cv_rmse.map(|v| (r.n_interior_knots, v)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(k, _)| k);
        Self {
            rows,
            best,
            warnings,
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("n_interior_knots,cv_rmse\n");
        for r in &self.rows {
            let v = r.cv_rmse.map_or_else(String::new, |v| v.to_string());
            out += &format!("{},{v}\n", r.n_interior_knots);
        }
        out
    }
}

/// Holdout-CV RMSE of the hierarchical fit for each interior knot count.
/// Candidates with fewer than one interior knot, or more basis functions
/// than the observed ages can support, are skipped with a warning.
pub fn knot_sweep(records: &FleetRecords, candidates: &[usize], cfg: &CvConfig) -> Result<KnotSweep> {
    let n_ages = cfg.fit.n_ages(records)?;
    let mut observed: Vec<usize> = records.records().iter().map(|r| r.age).collect();
    observed.sort_unstable();
    observed.dedup();
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for &n in candidates {
        let k = n + cfg.fit.degree + 1;
        if n < 1 || k + 2 > observed.len() || n + 1 >= n_ages {
            let w = format!("{n} interior knots skipped: infeasible for {} observed ages", observed.len());
            log::warn!("{w}");
            warnings.push(w);
            rows.push(KnotSweepRow {
                n_interior_knots: n,
                cv_rmse: None,
            });
            continue;
        }
        let mut c = cfg.clone();
        c.fit.n_interior_knots = n;
        let cv = holdout_cv(records, &c)?;
        rows.push(KnotSweepRow {
            n_interior_knots: n,
            cv_rmse: cv.rmse_where(HIERARCHICAL, |_| true),
        });
    }
    Ok(KnotSweep::from_rows(rows, warnings))
}
