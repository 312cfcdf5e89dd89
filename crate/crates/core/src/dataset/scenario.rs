//! Desk-scale synthetic microgrid traces.
//!
//! Each request is drawn from one of a few weather/operating regimes. Within a
//! regime, demand follows a two-peak daily profile while PV (reported as the
//! day-average output, attenuated by cloud cover), wind and the battery state
//! of charge depend only on the regime.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, MicrogridObservation, Provenance};
use crate::seed::rng_from_seed;

/// Closed interval sampled uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Bounds {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    fn sample(&self, rng: &mut impl rand::Rng) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..=self.max)
        } else {
            self.min
        }
    }

    fn check(&self, name: &str, upper: Option<f64>) -> Result<(), DatasetError> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.min < 0.0 || self.max < 0.0 {
            return Err(DatasetError::InvalidProfile(format!("{name}: bounds must be finite and >= 0")));
        }
        if self.min > self.max {
            return Err(DatasetError::InvalidProfile(format!("{name}: min > max")));
        }
        if let Some(u) = upper {
            if self.max > u {
                return Err(DatasetError::InvalidProfile(format!("{name}: max exceeds {u}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeProfile {
    pub name: String,
    /// Relative frequency of the regime.
    pub weight: f64,
    /// Multiplier on the household base load.
    pub load_factor: Bounds,
    /// Fraction of PV output lost to clouds, in `[0, 1]`.
    pub cloud_cover: Bounds,
    pub wind_kw: Bounds,
    pub soc: Bounds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioProfile {
    pub base_load_kw: Bounds,
    /// Day-average PV output under a clear sky.
    pub pv_clear_sky_kw: Bounds,
    pub battery_capacity_kwh: Bounds,
    pub regimes: Vec<RegimeProfile>,
}

impl Default for ScenarioProfile {
    fn default() -> Self {
        let regime = |name: &str, load, cloud, wind, soc| RegimeProfile {
            name: name.into(),
            weight: 1.0,
            load_factor: load,
            cloud_cover: cloud,
            wind_kw: wind,
            soc,
        };
        Self {
            base_load_kw: Bounds::new(4.0, 5.0),
            pv_clear_sky_kw: Bounds::new(5.0, 7.0),
            battery_capacity_kwh: Bounds::new(12.0, 18.0),
            regimes: vec![
                regime(
                    "storm",
                    Bounds::new(1.45, 2.05),
                    Bounds::new(0.775, 1.0),
                    Bounds::new(2.5, 4.5),
                    Bounds::new(0.0, 0.2),
                ),
                regime(
                    "overcast",
                    Bounds::new(0.9, 1.3),
                    Bounds::new(0.4, 0.8),
                    Bounds::new(0.0, 0.75),
                    Bounds::new(0.65, 0.85),
                ),
                regime(
                    "clear",
                    Bounds::new(0.3, 0.7),
                    Bounds::new(0.0, 0.15),
                    Bounds::new(1.0, 3.0),
                    Bounds::new(0.5, 0.7),
                ),
            ],
        }
    }
}

impl ScenarioProfile {
    pub fn validate(&self) -> Result<(), DatasetError> {
        self.base_load_kw.check("base_load_kw", None)?;
        self.pv_clear_sky_kw.check("pv_clear_sky_kw", None)?;
        self.battery_capacity_kwh.check("battery_capacity_kwh", None)?;
        if self.regimes.is_empty() {
            return Err(DatasetError::InvalidProfile("at least one regime required".into()));
        }
        for r in &self.regimes {
            if !(r.weight.is_finite() && r.weight > 0.0) {
                return Err(DatasetError::InvalidProfile(format!("{}: weight must be > 0", r.name)));
            }
            r.load_factor.check(&format!("{}.load_factor", r.name), None)?;
            r.cloud_cover.check(&format!("{}.cloud_cover", r.name), Some(1.0))?;
            r.wind_kw.check(&format!("{}.wind_kw", r.name), None)?;
            r.soc.check(&format!("{}.soc", r.name), Some(1.0))?;
        }
        Ok(())
    }
}

/// Relative household demand over the day: morning and evening peaks.
pub(crate) fn daily_load_shape(hour: u8) -> f64 {
    let h = f64::from(hour);
    0.6 + 0.4 * (-((h - 8.0) / 2.0).powi(2)).exp() + 0.7 * (-((h - 19.0) / 2.5).powi(2)).exp()
}

/// Draws `n` unlabelled observations. Deterministic for a fixed seed.
pub fn generate_scenario(n: usize, seed: u64, profile: &ScenarioProfile) -> Result<Dataset, DatasetError> {
    profile.validate()?;
    if n == 0 {
        return Err(DatasetError::EmptyDataset);
    }
    let mut rng = rng_from_seed(seed);
    let weights = WeightedIndex::new(profile.regimes.iter().map(|r| r.weight))
        .map_err(|e| DatasetError::InvalidProfile(e.to_string()))?;
    let mut observations = Vec::with_capacity(n);
    for _ in 0..n {
        let regime = &profile.regimes[weights.sample(&mut rng)];
        let hour: u8 = rng.random_range(0..24);
        let base = profile.base_load_kw.sample(&mut rng);
        let load = regime.load_factor.sample(&mut rng);
        let clear_sky = profile.pv_clear_sky_kw.sample(&mut rng);
        let cloud = regime.cloud_cover.sample(&mut rng);
        let wind = regime.wind_kw.sample(&mut rng);
        let capacity = profile.battery_capacity_kwh.sample(&mut rng);
        let soc = regime.soc.sample(&mut rng);
        observations.push(MicrogridObservation {
            consumption_kw: base * load * daily_load_shape(hour),
            pv_generation_kw: clear_sky * (1.0 - cloud),
            wind_generation_kw: wind,
            battery_capacity_kwh: capacity,
            battery_soc_frac: soc,
            hour_of_day: hour,
        });
    }
    Ok(Dataset::unlabeled(observations, Provenance::Real))
}
