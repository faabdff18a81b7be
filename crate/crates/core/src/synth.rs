//! Synthetic multi-station daily weather with heavy-tailed heat excursions.
//!
//! Daily maximum temperature at station `s` is
//!
//! ```text
//! b(t)    = base_s + A·sin(2π(doy − 105)/365.25) + a_s(t)
//! a(t)    = φ·a(t−1) + noise_sd·L·z(t)          z ~ N(0, I), LLᵀ = exp(−d/ℓ)
//! t_max   = b(t)                                 outside heat events
//!         = max(b(t), h_s) + Y(t)                inside,  Y ~ GPD(ξ, σ) i.i.d.
//! ```
//!
//! where `h_s` sits two stationary anomaly deviations above the station's
//! seasonal peak. Heat events start on summer days with probability
//! `exceed_prob` and last 3–7 days. Lifting event days onto `h_s` before adding
//! the excess keeps the upper tail of summer `t_max` exactly GPD above any
//! threshold at or beyond `h_s`, which the parameter-recovery checks rely on.
//! The remaining variables are simple functions of `t_max` plus noise, clipped
//! so every record passes the ingest range checks.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use chrono::{Datelike, NaiveDate};
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::{is_summer, next_day};
use crate::evt::gpd_survival_inverse;
use crate::ingest::{DailyRecord, StationMeta, StationSeries};

/// Heat level above the seasonal peak, in stationary anomaly deviations.
pub const HEAT_LEVEL_SDS: f64 = 2.0;
pub const EVENT_DAYS: (u32, u32) = (3, 7);
/// Station placement box (lon, lat), roughly British Columbia.
pub const LON_RANGE: (f64, f64) = (-130.0, -115.0);
pub const LAT_RANGE: (f64, f64) = (48.5, 58.0);
const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("invalid GPD parameters: n = {n}, sigma = {sigma}")]
    InvalidParams { n: usize, sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_stations: usize,
    pub n_years: usize,
    pub seed: u64,
    /// °C
    pub seasonal_amp: f64,
    pub ar1_coeff: f64,
    /// Innovation standard deviation of the anomaly process, °C.
    pub noise_sd: f64,
    pub gpd_xi: f64,
    /// °C
    pub gpd_sigma: f64,
    /// Daily probability that a heat event starts on a summer day.
    pub exceed_prob: f64,
    /// km
    pub spatial_length_scale: f64,
    pub start_year: i32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_stations: 71,
            n_years: 15,
            seed: 7,
            seasonal_amp: 10.0,
            ar1_coeff: 0.8,
            noise_sd: 2.0,
            gpd_xi: 0.2,
            gpd_sigma: 5.0,
            exceed_prob: 0.03,
            spatial_length_scale: 300.0,
            start_year: 2009,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |field, reason: String| Err(SynthError::InvalidConfig { field, reason });
        if self.n_stations == 0 {
            return bad("n_stations", "must be at least 1".into());
        }
        if self.n_years == 0 {
            return bad("n_years", "must be at least 1".into());
        }
        if !(self.ar1_coeff >= 0.0 && self.ar1_coeff < 1.0) {
            return bad("ar1_coeff", format!("{} not in [0, 1)", self.ar1_coeff));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd", format!("{} must be finite and >= 0", self.noise_sd));
        }
        if !(self.seasonal_amp >= 0.0 && self.seasonal_amp.is_finite()) {
            return bad("seasonal_amp", format!("{} must be finite and >= 0", self.seasonal_amp));
        }
        if !(self.gpd_sigma > 0.0 && self.gpd_sigma.is_finite()) {
            return bad("gpd_sigma", format!("{} must be > 0", self.gpd_sigma));
        }
        if !(self.gpd_xi.is_finite() && self.gpd_xi < 1.0) {
            return bad("gpd_xi", format!("{} must be finite and < 1", self.gpd_xi));
        }
        if !(0.0..=0.2).contains(&self.exceed_prob) {
            return bad("exceed_prob", format!("{} not in [0, 0.2]", self.exceed_prob));
        }
        if !(self.spatial_length_scale > 0.0) {
            return bad(
                "spatial_length_scale",
                format!("{} must be > 0", self.spatial_length_scale),
            );
        }
        if NaiveDate::from_ymd_opt(self.start_year, 1, 1).is_none() {
            return bad("start_year", format!("{} not representable", self.start_year));
        }
        Ok(())
    }

    /// Stationary standard deviation of the AR(1) anomaly.
    pub fn stationary_sd(&self) -> f64 {
        self.noise_sd / libm::sqrt(1.0 - self.ar1_coeff * self.ar1_coeff)
    }
}

/// Generated series plus the ground truth of where heat events were placed.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub series: Vec<StationSeries>,
    /// Per station, every date that was inside a heat event.
    pub event_days: Vec<Vec<NaiveDate>>,
}

/// Draws `n` GPD(ξ, σ) excesses by inverse-survival sampling.
pub fn sample_gpd<R: Rng + ?Sized>(
    n: usize,
    xi: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<f64>, SynthError> {
    if n == 0 || !(sigma > 0.0) {
        return Err(SynthError::InvalidParams { n, sigma });
    }
    Ok((0..n)
        .map(|_| gpd_survival_inverse(rng.sample(Open01), xi, sigma))
        .collect())
}

pub fn generate(config: &SynthConfig) -> Result<Vec<StationSeries>, SynthError> {
    Ok(generate_with_events(config)?.series)
}

/// Places stations uniformly in the placement box, then simulates.
pub fn generate_with_events(config: &SynthConfig) -> Result<SynthOutput, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let metas: Vec<StationMeta> = (0..config.n_stations)
        .map(|i| {
            let lon = LON_RANGE.0 + (LON_RANGE.1 - LON_RANGE.0) * rng.random::<f64>();
            let lat = LAT_RANGE.0 + (LAT_RANGE.1 - LAT_RANGE.0) * rng.random::<f64>();
            StationMeta::new(format!("SYN{:03}", i + 1), format!("Synthetic {:03}", i + 1), lon, lat)
                .expect("placement box is valid")
        })
        .collect();
    simulate(config, metas, &mut rng)
}

/// Simulates at caller-chosen station locations.
pub fn generate_at(config: &SynthConfig, stations: &[StationMeta]) -> Result<SynthOutput, SynthError> {
    config.validate()?;
    if stations.len() != config.n_stations {
        return Err(SynthError::InvalidConfig {
            field: "n_stations",
            reason: format!("{} stations given, config says {}", stations.len(), config.n_stations),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    simulate(config, stations.to_vec(), &mut rng)
}

/// Great-circle distance in km.
pub fn haversine_km(a: &StationMeta, b: &StationMeta) -> f64 {
    let (la1, la2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = la2 - la1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = libm::pow(libm::sin(dlat / 2.0), 2.0)
        + libm::cos(la1) * libm::cos(la2) * libm::pow(libm::sin(dlon / 2.0), 2.0);
    2.0 * EARTH_RADIUS_KM * libm::asin(libm::sqrt(h.min(1.0)))
}

/// Lower Cholesky factor of a symmetric positive-definite row-major matrix.
fn cholesky(m: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = m[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * n + i] = libm::sqrt(s);
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn seasonal_phase(date: NaiveDate) -> f64 {
    libm::sin(2.0 * core::f64::consts::PI * (date.ordinal0() as f64 - 105.0) / 365.25)
}

fn simulate(config: &SynthConfig, metas: Vec<StationMeta>, rng: &mut ChaCha8Rng) -> Result<SynthOutput, SynthError> {
    let n = metas.len();
    let mut kernel = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let d = haversine_km(&metas[i], &metas[j]);
            kernel[i * n + j] = libm::exp(-d / config.spatial_length_scale);
        }
        kernel[i * n + i] += 1e-9;
    }
    let chol = cholesky(&kernel, n).ok_or_else(|| SynthError::InvalidConfig {
        field: "spatial_length_scale",
        reason: "correlation kernel is not positive definite".into(),
    })?;

    let sd = config.stationary_sd();
    let base: Vec<f64> = metas.iter().map(|m| 20.0 - 0.5 * (m.lat - 49.0)).collect();
    let heat_level: Vec<f64> = base
        .iter()
        .map(|b| b + config.seasonal_amp + HEAT_LEVEL_SDS * sd)
        .collect();

    let start = NaiveDate::from_ymd_opt(config.start_year, 1, 1).unwrap();
    let end = NaiveDate::from_ymd_opt(config.start_year + config.n_years as i32 - 1, 12, 31).ok_or_else(|| {
        SynthError::InvalidConfig {
            field: "n_years",
            reason: "end date not representable".into(),
        }
    })?;
    let n_days = (end - start).num_days() as usize + 1;

    let mut records: Vec<Vec<DailyRecord>> = (0..n).map(|_| Vec::with_capacity(n_days)).collect();
    let mut event_days: Vec<Vec<NaiveDate>> = vec![Vec::new(); n];
    let mut anomaly = vec![0.0; n];
    let mut remaining = vec![0u32; n];
    let mut z = vec![0.0; n];

    let mut date = start;
    for _ in 0..n_days {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for i in 0..n {
            let eps: f64 = (0..=i).map(|k| chol[i * n + k] * z[k]).sum();
            anomaly[i] = config.ar1_coeff * anomaly[i] + config.noise_sd * eps;
        }
        let summer = is_summer(date);
        let season = config.seasonal_amp * seasonal_phase(date);
        for s in 0..n {
            if remaining[s] == 0 && summer && config.exceed_prob > 0.0 && rng.random::<f64>() < config.exceed_prob {
                remaining[s] = rng.random_range(EVENT_DAYS.0..=EVENT_DAYS.1);
            }
            let background = base[s] + season + anomaly[s];
            let t_max = if remaining[s] > 0 {
                remaining[s] -= 1;
                event_days[s].push(date);
                let excess = gpd_survival_inverse(rng.sample(Open01), config.gpd_xi, config.gpd_sigma);
                background.max(heat_level[s]) + excess
            } else {
                background
            };
            records[s].push(secondary_variables(date, t_max, anomaly[s], remaining[s] > 0, rng));
        }
        date = next_day(date);
    }

    let series = metas
        .into_iter()
        .zip(records)
        .map(|(m, r)| StationSeries::new(m, r).expect("generated records satisfy invariants"))
        .collect();
    Ok(SynthOutput { series, event_days })
}

fn secondary_variables(date: NaiveDate, t_max: f64, anomaly: f64, hot: bool, rng: &mut ChaCha8Rng) -> DailyRecord {
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let dtr = (8.0 + 2.0 * normal(rng)).clamp(2.0, 15.0);
    let t_min = t_max - dtr;
    let t_avg = t_min + dtr * (0.4 + 0.2 * rng.random::<f64>());
    let t_dew = t_min - (1.0 + 2.0 * normal(rng).abs());
    let magnus = |t: f64| 17.625 * t / (243.04 + t);
    let rh = (100.0 * libm::exp(magnus(t_dew) - magnus(t_avg))).clamp(0.0, 100.0);
    let wind = (3.0 + 1.5 * normal(rng)).abs();
    let wet_chance = if hot { 0.1 } else { 0.3 };
    let precip = if rng.random::<f64>() < wet_chance {
        -5.0 * libm::log(rng.sample::<f64, _>(Open01))
    } else {
        0.0
    };
    let pressure = 101.3 - 0.05 * anomaly + 0.4 * normal(rng);
    DailyRecord {
        date,
        t_max: Some(t_max),
        t_min: Some(t_min),
        t_avg: Some(t_avg),
        t_dew: Some(t_dew),
        rh: Some(rh),
        wind: Some(wind),
        precip: Some(precip),
        pressure: Some(pressure),
    }
}
