//! Peaks-over-threshold statistics.
//!
//! Exceedances over an upper empirical quantile are modeled with the
//! generalized Pareto distribution
//!
//! ```text
//! H(y | ξ, σ) = 1 − (1 + ξy/σ)^(−1/ξ)     ξ ≠ 0
//!             = 1 − exp(−y/σ)            ξ = 0
//! ```
//!
//! and fitted by maximum likelihood: Nelder–Mead on `(ξ, ln σ)` from three
//! starting shapes, with ξ confined to `[-0.9, 0.9]`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimize::{nelder_mead, NelderMeadOptions};
use crate::stats;

pub const DEFAULT_QUANTILE: f64 = 0.90;
pub const MIN_OBSERVATIONS: usize = 100;
pub const MIN_EXCEEDANCES: usize = 30;
pub const XI_BOUNDS: (f64, f64) = (-0.9, 0.9);
/// Shapes this close to zero use the exponential closed forms.
pub const EXPONENTIAL_XI: f64 = 1e-8;

const START_XI: [f64; 3] = [-0.2, 0.05, 0.3];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvtError {
    #[error("too few observations: {got} < {need}")]
    TooFewObservations { got: usize, need: usize },
    #[error("quantile {0} must lie in (0.5, 1)")]
    InvalidQuantile(f64),
    #[error("too few exceedances: {got} < {need}")]
    TooFewExceedances { got: usize, need: usize },
    #[error("exceedances must be finite and strictly positive")]
    InvalidExceedance,
    #[error("likelihood is not finite at any admissible point")]
    NonFiniteLikelihood,
    #[error("series is degenerate (no spread above the threshold)")]
    DegenerateSeries,
    #[error("y = {y} outside the GPD support")]
    OutOfSupport { y: f64 },
    #[error("invalid GPD parameters: sigma = {sigma}")]
    InvalidParams { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exceedances {
    pub threshold: f64,
    /// `x − threshold` for every `x > threshold`, in input order.
    pub values: Vec<f64>,
}

/// Splits a series at its type-7 `quantile` and returns the excesses above it.
/// Non-finite entries are treated as missing.
pub fn extract_exceedances(t_max: &[f64], quantile: f64) -> Result<Exceedances, EvtError> {
    if !(quantile > 0.5 && quantile < 1.0) {
        return Err(EvtError::InvalidQuantile(quantile));
    }
    let present: Vec<f64> = t_max.iter().copied().filter(|v| v.is_finite()).collect();
    if present.len() < MIN_OBSERVATIONS {
        return Err(EvtError::TooFewObservations {
            got: present.len(),
            need: MIN_OBSERVATIONS,
        });
    }
    let threshold = stats::quantile(&present, quantile);
    let values = present
        .iter()
        .filter(|&&v| v > threshold)
        .map(|v| v - threshold)
        .collect();
    Ok(Exceedances { threshold, values })
}

/// GPD log-likelihood; `-∞` outside the support or for `σ ≤ 0`.
pub fn gpd_log_likelihood(y: &[f64], xi: f64, sigma: f64) -> f64 {
    if !(sigma > 0.0) || !xi.is_finite() {
        return f64::NEG_INFINITY;
    }
    let n = y.len() as f64;
    let log_sigma = libm::log(sigma);
    if xi.abs() < EXPONENTIAL_XI {
        return -n * log_sigma - y.iter().sum::<f64>() / sigma;
    }
    let mut acc = 0.0;
    for &v in y {
        let z = xi * v / sigma;
        if !(1.0 + z > 0.0) {
            return f64::NEG_INFINITY;
        }
        acc += libm::log1p(z);
    }
    -n * log_sigma - (1.0 + 1.0 / xi) * acc
}

/// `H(y | ξ, σ)`.
pub fn gpd_cdf(y: f64, xi: f64, sigma: f64) -> Result<f64, EvtError> {
    if !(sigma > 0.0) {
        return Err(EvtError::InvalidParams { sigma });
    }
    if !(y >= 0.0) {
        return Err(EvtError::OutOfSupport { y });
    }
    if xi.abs() < EXPONENTIAL_XI {
        return Ok(-libm::expm1(-y / sigma));
    }
    let z = xi * y / sigma;
    if xi < 0.0 && y > -sigma / xi {
        return Err(EvtError::OutOfSupport { y });
    }
    if z <= -1.0 {
        // upper endpoint of a bounded tail
        return Ok(1.0);
    }
    Ok(-libm::expm1(-libm::log1p(z) / xi))
}

/// Excess with survival probability `u`: `σ(u^(−ξ) − 1)/ξ`, or `−σ ln u` when
/// ξ = 0. Feeding `u ~ Uniform(0, 1)` yields GPD draws.
pub fn gpd_survival_inverse(u: f64, xi: f64, sigma: f64) -> f64 {
    if xi.abs() < EXPONENTIAL_XI {
        -sigma * libm::log(u)
    } else {
        sigma * libm::expm1(-xi * libm::log(u)) / xi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdFit {
    pub xi: f64,
    pub sigma: f64,
    pub log_likelihood: f64,
    pub converged: bool,
    /// The shape estimate sits on one of [`XI_BOUNDS`].
    pub at_bound: bool,
}

/// Maximum-likelihood GPD fit with the default minimum sample size.
pub fn fit_gpd_mle(exceedances: &[f64]) -> Result<GpdFit, EvtError> {
    fit_gpd_mle_with(exceedances, MIN_EXCEEDANCES)
}

pub fn fit_gpd_mle_with(exceedances: &[f64], min_exceedances: usize) -> Result<GpdFit, EvtError> {
    let y = exceedances;
    if y.len() < min_exceedances.max(2) {
        return Err(EvtError::TooFewExceedances {
            got: y.len(),
            need: min_exceedances.max(2),
        });
    }
    if y.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(EvtError::InvalidExceedance);
    }
    let max = y.iter().copied().fold(f64::MIN, f64::max);
    let min = y.iter().copied().fold(f64::MAX, f64::min);
    if max == min {
        // Likelihood grows without bound as ξ → −1, σ → −ξ·y.
        return Err(EvtError::NonFiniteLikelihood);
    }
    let mean = stats::mean(y);

    let objective = |p: &[f64]| -> f64 {
        let (xi, log_sigma) = (p[0], p[1]);
        if xi < XI_BOUNDS.0 || xi > XI_BOUNDS.1 {
            return f64::INFINITY;
        }
        -gpd_log_likelihood(y, xi, libm::exp(log_sigma))
    };
    let opts = NelderMeadOptions::default();

    let mut best: Option<crate::optimize::Minimum> = None;
    for &xi0 in &START_XI {
        let mut sigma0 = mean;
        if xi0 < 0.0 && 1.0 + xi0 * max / sigma0 <= 0.0 {
            sigma0 = -xi0 * max * 1.5;
        }
        let m = nelder_mead(objective, &[xi0, libm::log(sigma0)], &opts);
        if best.as_ref().is_none_or(|b| m.value < b.value) {
            best = Some(m);
        }
    }
    let mut best = best.unwrap();
    // Restart from the incumbent until it stops moving.
    for _ in 0..3 {
        let polish = NelderMeadOptions {
            initial_step: 0.01,
            ..opts
        };
        let m = nelder_mead(objective, &best.x, &polish);
        let improved = m.value < best.value;
        if improved {
            best = m;
        } else {
            best.converged |= m.converged;
            break;
        }
    }
    if !best.value.is_finite() {
        return Err(EvtError::NonFiniteLikelihood);
    }

    let (mut xi, mut sigma) = (best.x[0], libm::exp(best.x[1]));
    if xi.abs() < EXPONENTIAL_XI {
        xi = 0.0;
        sigma = mean;
    }
    let log_likelihood = gpd_log_likelihood(y, xi, sigma);
    if !log_likelihood.is_finite() {
        return Err(EvtError::NonFiniteLikelihood);
    }
    let at_bound = (xi - XI_BOUNDS.0).abs() < 1e-6 || (xi - XI_BOUNDS.1).abs() < 1e-6;
    if at_bound {
        log::warn!("GPD shape estimate {xi:.4} reached its bound");
    }
    Ok(GpdFit {
        xi,
        sigma,
        log_likelihood,
        converged: best.converged,
        at_bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvtConfig {
    pub quantile: f64,
    pub min_exceedances: usize,
}

impl Default for EvtConfig {
    fn default() -> Self {
        Self {
            quantile: DEFAULT_QUANTILE,
            min_exceedances: MIN_EXCEEDANCES,
        }
    }
}

/// Per-station tail summary appended to the feature vector and used for the
/// station weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdDescriptors {
    pub threshold_u: f64,
    pub xi: f64,
    pub sigma: f64,
    /// Mean of the input series.
    pub mu: f64,
    /// Unbiased variance of the input series.
    pub variance: f64,
    /// Type-7 95th percentile of the input series.
    pub q95: f64,
    pub n_exceed: usize,
    pub converged: bool,
    pub at_bound: bool,
}

pub fn compute_descriptors(t_max: &[f64], config: &EvtConfig) -> Result<GpdDescriptors, EvtError> {
    let exc = extract_exceedances(t_max, config.quantile)?;
    if exc.values.is_empty() {
        return Err(EvtError::DegenerateSeries);
    }
    let fit = match fit_gpd_mle_with(&exc.values, config.min_exceedances) {
        Err(EvtError::NonFiniteLikelihood) if exc.values.iter().all(|v| *v == exc.values[0]) => {
            return Err(EvtError::DegenerateSeries)
        }
        other => other?,
    };
    let present: Vec<f64> = t_max.iter().copied().filter(|v| v.is_finite()).collect();
    let sorted = stats::sorted(&present);
    Ok(GpdDescriptors {
        threshold_u: exc.threshold,
        xi: fit.xi,
        sigma: fit.sigma,
        mu: stats::mean(&present),
        variance: stats::sample_variance(&present),
        q95: stats::quantile_sorted(&sorted, 0.95),
        n_exceed: exc.values.len(),
        converged: fit.converged,
        at_bound: fit.at_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn one_to_hundred() -> Vec<f64> {
        (1..=100).map(f64::from).collect()
    }

    #[test]
    fn exceedances_of_one_to_hundred() {
        let e = extract_exceedances(&one_to_hundred(), 0.9).unwrap();
        assert!((e.threshold - 90.1).abs() < 1e-12);
        assert_eq!(e.values.len(), 10);
        for (k, v) in e.values.iter().enumerate() {
            assert!((v - (0.9 + k as f64)).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn exceedance_preconditions() {
        let short: Vec<f64> = (0..50).map(f64::from).collect();
        assert!(matches!(
            extract_exceedances(&short, 0.9),
            Err(EvtError::TooFewObservations { got: 50, .. })
        ));
        assert!(matches!(extract_exceedances(&one_to_hundred(), 0.4), Err(EvtError::InvalidQuantile(_))));
        let flat = vec![12.0; 200];
        assert!(extract_exceedances(&flat, 0.9).unwrap().values.is_empty());
        assert_eq!(compute_descriptors(&flat, &EvtConfig::default()), Err(EvtError::DegenerateSeries));
    }

    #[test]
    fn cdf_values() {
        assert_eq!(gpd_cdf(0.0, 0.3, 2.0).unwrap(), 0.0);
        let expo = 1.0 - libm::exp(-1.0);
        assert!((gpd_cdf(2.0, 0.0, 2.0).unwrap() - expo).abs() < 1e-15);
        assert!((gpd_cdf(1.0, 1.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(gpd_cdf(-1.0, 0.1, 1.0), Err(EvtError::OutOfSupport { .. })));
        assert!(matches!(gpd_cdf(2.5, -0.5, 1.0), Err(EvtError::OutOfSupport { .. })));
        assert!((gpd_cdf(2.0, -0.5, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(gpd_cdf(1.0, 0.1, 0.0), Err(EvtError::InvalidParams { .. })));
    }

    #[test]
    fn cdf_near_zero_shape_is_exponential() {
        for &xi in &[5e-9, -5e-9, 0.0] {
            for &y in &[0.1, 1.0, 7.5, 30.0] {
                let h = gpd_cdf(y, xi, 1.7).unwrap();
                let e = 1.0 - libm::exp(-y / 1.7);
                assert!((h - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn survival_inverse_round_trip() {
        for &(xi, s) in &[(0.2, 5.0), (0.0, 1.0), (-0.4, 2.0)] {
            for &u in &[0.01, 0.3, 0.5, 0.99] {
                let y = gpd_survival_inverse(u, xi, s);
                let h = gpd_cdf(y, xi, s).unwrap();
                assert!((h - (1.0 - u)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fit_rejects_degenerate_and_small() {
        assert!(matches!(fit_gpd_mle(&[1.0; 10]), Err(EvtError::TooFewExceedances { .. })));
        assert_eq!(fit_gpd_mle(&[1.5; 40]), Err(EvtError::NonFiniteLikelihood));
        let mut bad = vec![1.0; 40];
        bad[3] = -1.0;
        assert_eq!(fit_gpd_mle(&bad), Err(EvtError::InvalidExceedance));
    }

    #[test]
    fn descriptors_of_one_to_hundred() {
        let cfg = EvtConfig {
            quantile: 0.9,
            min_exceedances: 10,
        };
        let d = compute_descriptors(&one_to_hundred(), &cfg).unwrap();
        assert!((d.mu - 50.5).abs() < 1e-12);
        assert!((d.variance - 841.666_666_666_666_7).abs() < 1e-9);
        assert!((d.q95 - 95.05).abs() < 1e-12);
        assert!((d.threshold_u - 90.1).abs() < 1e-12);
        assert_eq!(d.n_exceed, 10);
        // evenly spaced excesses have a bounded tail
        assert!(d.xi < 0.0);
        assert!(d.sigma > 0.0);
        assert!(matches!(
            compute_descriptors(&one_to_hundred(), &EvtConfig::default()),
            Err(EvtError::TooFewExceedances { got: 10, .. })
        ));
    }
}
