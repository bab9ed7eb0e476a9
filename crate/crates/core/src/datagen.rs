//! Synthetic fleets: bathtub-shaped type curves, ship-level heterogeneity,
//! imbalanced type sizes, partial observation windows and early-age
//! warranty censoring.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{FleetRecords, Record};
use crate::error::{Error, Result};

/// `a·exp(−b·t) + c + d·max(0, t − t0)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathtubParams {
    pub early_amplitude: f64,
    pub early_decay: f64,
    pub flat_level: f64,
    pub wearout_rate: f64,
    pub wearout_onset: f64,
}

impl BathtubParams {
    pub fn new(a: f64, b: f64, c: f64, d: f64, t0: f64) -> Self {
        Self {
            early_amplitude: a,
            early_decay: b,
            flat_level: c,
            wearout_rate: d,
            wearout_onset: t0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = [
            self.early_amplitude,
            self.early_decay,
            self.flat_level,
            self.wearout_rate,
            self.wearout_onset,
        ];
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation(format!(
                "bathtub parameters must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }

    fn value(&self, t: f64) -> f64 {
        let wear = (t - self.wearout_onset).max(0.0);
        self.early_amplitude * (-self.early_decay * t).exp()
            + self.flat_level
            + self.wearout_rate * wear * wear
    }
}

pub fn bathtub(t: f64, params: &BathtubParams) -> Result<f64> {
    params.validate()?;
    Ok(params.value(t))
}

/// Distribution of engine types around a fleet-wide archetype: every
/// parameter is scaled by an independent log-normal factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Archetype {
    pub center: BathtubParams,
    pub relative_sd: f64,
}

impl Default for Archetype {
    fn default() -> Self {
        Self {
            center: BathtubParams::new(1.5, 0.33, 1.0, 0.005, 18.0),
            relative_sd: 0.25,
        }
    }
}

impl Archetype {
    pub fn draw_type(&self, rng: &mut impl Rng) -> BathtubParams {
        let n = Normal::new(0.0, self.relative_sd).expect("non-negative sd");
        let mut f = || n.sample(rng).exp();
        let c = self.center;
        BathtubParams::new(
            c.early_amplitude * f(),
            c.early_decay * f(),
            c.flat_level * f(),
            c.wearout_rate * f(),
            c.wearout_onset * f(),
        )
    }
}

/// Per-ship observed age span: length uniform in `[min_len, max_len]`
/// (capped at the lifecycle), start uniform over feasible positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationWindow {
    pub min_len: usize,
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetScenario {
    pub type_names: Vec<String>,
    pub type_curves: Vec<BathtubParams>,
    pub ships_per_type: Vec<usize>,
    pub lifecycle: usize,
    /// Sd of the ship intercept offset and of the relative changes to the
    /// early and wear-out amplitudes.
    pub ship_sd: f64,
    pub noise_sd: f64,
    pub warranty_censor_age: usize,
    pub p_censor: f64,
    pub window: ObservationWindow,
}

impl Default for FleetScenario {
    /// Five engine types with 6/27/43/19/4 ships over a 31-year lifecycle.
    fn default() -> Self {
        let curves = vec![
            BathtubParams::new(1.5, 0.35, 1.0, 0.004, 18.0),
            BathtubParams::new(1.2, 0.30, 1.2, 0.006, 16.0),
            BathtubParams::new(1.0, 0.40, 1.1, 0.008, 15.0),
            BathtubParams::new(1.8, 0.30, 0.9, 0.003, 20.0),
            BathtubParams::new(2.0, 0.35, 0.8, 0.003, 22.0),
        ];
        Self::with_types(curves, vec![6, 27, 43, 19, 4])
    }
}

impl FleetScenario {
    pub fn with_types(type_curves: Vec<BathtubParams>, ships_per_type: Vec<usize>) -> Self {
        Self {
            type_names: (1..=type_curves.len()).map(|e| format!("Type {e}")).collect(),
            type_curves,
            ships_per_type,
            lifecycle: 31,
            ship_sd: 0.1,
            noise_sd: 0.15,
            warranty_censor_age: 5,
            p_censor: 0.7,
            window: ObservationWindow {
                min_len: 3,
                max_len: 31,
            },
        }
    }

    /// Types drawn from an archetype.
    pub fn from_archetype(
        archetype: &Archetype,
        ships_per_type: Vec<usize>,
        rng: &mut impl Rng,
    ) -> Self {
        let curves = ships_per_type.iter().map(|_| archetype.draw_type(rng)).collect();
        Self::with_types(curves, ships_per_type)
    }

    pub fn n_ships(&self) -> usize {
        self.ships_per_type.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.type_curves.len() != self.ships_per_type.len()
            || self.type_names.len() != self.type_curves.len()
        {
            return Err(Error::Scenario(
                "type names, curves and ship counts must have equal length".into(),
            ));
        }
        for c in &self.type_curves {
            c.validate()?;
        }
        if self.lifecycle == 0 {
            return Err(Error::Scenario("lifecycle must be positive".into()));
        }
        if self.warranty_censor_age >= self.lifecycle {
            return Err(Error::Scenario(
                "warranty censor age must be below the lifecycle".into(),
            ));
        }
        if !(self.ship_sd >= 0.0) || !(self.noise_sd >= 0.0) {
            return Err(Error::Scenario("standard deviations must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.p_censor) {
            return Err(Error::Scenario("p_censor must lie in [0, 1]".into()));
        }
        let w = self.window;
        if w.min_len == 0 || w.min_len > w.max_len || w.min_len > self.lifecycle {
            return Err(Error::Scenario(format!("invalid observation window {w:?}")));
        }
        Ok(())
    }

    pub fn type_curve(&self, e: usize) -> Vec<f64> {
        (1..=self.lifecycle)
            .map(|t| self.type_curves[e].value(t as f64))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShipTruth {
    pub ship_id: String,
    pub engine_type: String,
    pub type_index: usize,
    pub intercept_offset: f64,
    pub early_scale: f64,
    pub wearout_scale: f64,
    pub window: (usize, usize),
    /// Noise-free curve over ages `1..=lifecycle`.
    pub curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub scenario: FleetScenario,
    pub type_curves: Vec<Vec<f64>>,
    pub ships: Vec<ShipTruth>,
    pub n_censored: usize,
    pub n_floored: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFleet {
    pub records: FleetRecords,
    pub truth: GroundTruth,
}

const WINDOW_ATTEMPTS: usize = 100;

pub fn generate(scenario: &FleetScenario, seed: u64) -> Result<SyntheticFleet> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ship_noise = Normal::new(0.0, scenario.ship_sd).expect("validated sd");
    let obs_noise = Normal::new(0.0, scenario.noise_sd).expect("validated sd");
    let t_max = scenario.lifecycle;
    let width = scenario.ship_count_width();

    let mut records = Vec::new();
    let mut ships = Vec::with_capacity(scenario.n_ships());
    let mut n_censored = 0;
    let mut n_floored = 0;
    let mut ship_no = 0;
    for (e, &count) in scenario.ships_per_type.iter().enumerate() {
        let base = scenario.type_curves[e];
        for _ in 0..count {
            ship_no += 1;
            let ship_id = format!("S{ship_no:0width$}");
            let intercept_offset = ship_noise.sample(&mut rng);
            let early_scale = 1.0 + ship_noise.sample(&mut rng);
            let wearout_scale = 1.0 + ship_noise.sample(&mut rng);
            let curve: Vec<f64> = (1..=t_max)
                .map(|t| {
                    let t = t as f64;
                    let wear = (t - base.wearout_onset).max(0.0);
                    early_scale * base.early_amplitude * (-base.early_decay * t).exp()
                        + base.flat_level
                        + intercept_offset
                        + wearout_scale * base.wearout_rate * wear * wear
                })
                .collect();

            let mut kept = Vec::new();
            let mut window = (0, 0);
            for _ in 0..WINDOW_ATTEMPTS {
                let max_len = scenario.window.max_len.min(t_max);
                let len = rng.random_range(scenario.window.min_len..=max_len);
                let start = rng.random_range(1..=t_max - len + 1);
                window = (start, start + len - 1);
                kept.clear();
                let mut censored = 0;
                for age in window.0..=window.1 {
                    let y = curve[age - 1] + obs_noise.sample(&mut rng);
                    if age < scenario.warranty_censor_age && rng.random::<f64>() < scenario.p_censor
                    {
                        censored += 1;
                        continue;
                    }
                    kept.push((age, y));
                }
                if !kept.is_empty() {
                    n_censored += censored;
                    break;
                }
            }
            if kept.is_empty() {
                return Err(Error::Scenario(format!(
                    "ship {ship_id} lost every observation to censoring"
                )));
            }
            for (age, y) in kept {
                if y < 0.0 {
                    n_floored += 1;
                }
                records.push(Record {
                    ship_id: ship_id.clone(),
                    engine_type: scenario.type_names[e].clone(),
                    age,
                    failure_rate: y.max(0.0),
                });
            }
            ships.push(ShipTruth {
                ship_id,
                engine_type: scenario.type_names[e].clone(),
                type_index: e,
                intercept_offset,
                early_scale,
                wearout_scale,
                window,
                curve,
            });
        }
    }
    if records.is_empty() {
        return Err(Error::Scenario("scenario produced no observations".into()));
    }
    Ok(SyntheticFleet {
        records: FleetRecords::new(records)?,
        truth: GroundTruth {
            seed,
            scenario: scenario.clone(),
            type_curves: (0..scenario.type_curves.len())
                .map(|e| scenario.type_curve(e))
                .collect(),
            ships,
            n_censored,
            n_floored,
        },
    })
}

impl FleetScenario {
    fn ship_count_width(&self) -> usize {
        self.n_ships().max(1).to_string().len().max(3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bathtub_examples() {
        let flat = BathtubParams::new(0.0, 0.7, 0.4, 0.0, 10.0);
        for t in 1..=31 {
            assert_eq!(bathtub(t as f64, &flat).unwrap(), 0.4);
        }
        let early_only = BathtubParams::new(2.0, 0.3, 0.5, 0.01, 40.0);
        let vals: Vec<f64> = (1..=31).map(|t| bathtub(t as f64, &early_only).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));

        let p = BathtubParams::new(2.0, 0.5, 0.3, 0.01, 20.0);
        let v = bathtub(25.0, &p).unwrap();
        let expected = 2.0 * (-12.5f64).exp() + 0.3 + 0.25;
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.550).abs() < 1e-3);

        let bad = BathtubParams::new(-1.0, 0.5, 0.3, 0.01, 20.0);
        assert!(matches!(bathtub(1.0, &bad), Err(Error::Validation(_))));
    }

    #[test]
    fn default_scenario_structure() {
        let s = FleetScenario::default();
        assert_eq!(s.ships_per_type, vec![6, 27, 43, 19, 4]);
        assert_eq!(s.n_ships(), 99);
        assert_eq!(s.lifecycle, 31);
        assert_eq!(s.type_curves.len(), 5);
        assert_eq!(s.warranty_censor_age, 5);
        assert_eq!(s.p_censor, 0.7);
    }

    #[test]
    fn noiseless_ships_follow_type_curves() {
        let mut s = FleetScenario::default();
        s.ship_sd = 0.0;
        s.noise_sd = 0.0;
        s.p_censor = 0.0;
        let fleet = generate(&s, 3).unwrap();
        let truth = &fleet.truth;
        for r in fleet.records.records() {
            let ship = truth.ships.iter().find(|t| t.ship_id == r.ship_id).unwrap();
            let expected = truth.type_curves[ship.type_index][r.age - 1];
            assert!((r.failure_rate - expected).abs() < 1e-12);
        }
        assert_eq!(fleet.records.ship_ids().len(), 99);
    }

    #[test]
    fn deterministic_under_seed() {
        let s = FleetScenario::default();
        assert_eq!(generate(&s, 8).unwrap(), generate(&s, 8).unwrap());
        assert_ne!(generate(&s, 8).unwrap().records, generate(&s, 9).unwrap().records);
    }

    #[test]
    fn censoring_only_touches_early_ages() {
        let mut s = FleetScenario::default();
        s.p_censor = 1.0;
        let censored = generate(&s, 4).unwrap();
        s.p_censor = 0.0;
        let full = generate(&s, 4).unwrap();
        assert!(censored.records.records().iter().all(|r| r.age >= 5));
        assert!(censored.truth.n_censored > 0);
        assert_eq!(full.truth.n_censored, 0);
        assert!(full.records.records().iter().any(|r| r.age < 5));
        // every window age at or past the censor age is present
        for ship in &censored.truth.ships {
            let ages: Vec<usize> = censored
                .records
                .records()
                .iter()
                .filter(|r| r.ship_id == ship.ship_id)
                .map(|r| r.age)
                .collect();
            let expected: Vec<usize> = (ship.window.0.max(5)..=ship.window.1).collect();
            assert_eq!(ages, expected);
        }
    }

    #[test]
    fn rates_are_floored_at_zero() {
        let mut s = FleetScenario::default();
        s.noise_sd = 2.0;
        let fleet = generate(&s, 5).unwrap();
        assert!(fleet.records.records().iter().all(|r| r.failure_rate >= 0.0));
        assert!(fleet.truth.n_floored > 0);
    }

    #[test]
    fn ship_population_mean_matches_type_curve() {
        let mut s = FleetScenario::with_types(vec![FleetScenario::default().type_curves[1]], vec![10_000]);
        s.p_censor = 0.0;
        s.window = ObservationWindow {
            min_len: 31,
            max_len: 31,
        };
        let fleet = generate(&s, 12).unwrap();
        assert_eq!(fleet.truth.n_floored, 0);
        let mut sum = vec![0.0; 31];
        let mut count = vec![0usize; 31];
        for r in fleet.records.records() {
            sum[r.age - 1] += r.failure_rate;
            count[r.age - 1] += 1;
        }
        for t in 0..31 {
            let m = sum[t] / count[t] as f64;
            assert!((m - fleet.truth.type_curves[0][t]).abs() < 0.01, "age {}", t + 1);
        }
    }

    #[test]
    fn invalid_scenarios() {
        let mut s = FleetScenario::default();
        s.warranty_censor_age = 31;
        assert!(matches!(generate(&s, 1), Err(Error::Scenario(_))));
        let mut s = FleetScenario::default();
        s.ships_per_type.pop();
        assert!(generate(&s, 1).is_err());
        let s = FleetScenario::with_types(vec![], vec![]);
        assert!(matches!(generate(&s, 1), Err(Error::Scenario(_))));
    }
}
