//! Station graph: Pearson correlation, tail-informed station weights and the
//! effective adjacency `a_ij = ρ'_ij · w_i · w_j` that drives attention.
//!
//! Matrices are row-major `N × N`.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evt::GpdDescriptors;

pub const DEFAULT_SPARSIFY_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("station {0} has zero variance over the correlation days")]
    ZeroVarianceStation(String),
    #[error("stations {0} and {1} share fewer than 2 dates")]
    TooFewDates(String, String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("station weights need a positive scale for every station")]
    MissingDescriptors,
}

/// How negative correlations enter the adjacency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NegativeCorrelation {
    /// `ρ' = max(ρ, 0)`.
    #[default]
    Clamp,
    /// Leave negative entries in place. Attention ignores them either way,
    /// since only positive entries are neighbours.
    Keep,
}

/// Pairwise-complete Pearson correlation. `series[i]` holds station `i` on a
/// shared calendar, with NaN for missing days.
pub fn pearson_adjacency(ids: &[String], series: &[Vec<f64>]) -> Result<Vec<f64>, GraphError> {
    let n = series.len();
    if ids.len() != n {
        return Err(GraphError::ShapeMismatch(alloc::format!("{} ids for {} series", ids.len(), n)));
    }
    if let Some(len) = series.first().map(Vec::len) {
        if series.iter().any(|s| s.len() != len) {
            return Err(GraphError::ShapeMismatch("series lengths differ".into()));
        }
    }
    let mut rho = vec![0.0; n * n];
    for i in 0..n {
        rho[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let pairs: Vec<(f64, f64)> = series[i]
                .iter()
                .zip(&series[j])
                .filter(|(a, b)| a.is_finite() && b.is_finite())
                .map(|(a, b)| (*a, *b))
                .collect();
            if pairs.len() < 2 {
                return Err(GraphError::TooFewDates(ids[i].clone(), ids[j].clone()));
            }
            let t = pairs.len() as f64;
            let mi = pairs.iter().map(|p| p.0).sum::<f64>() / t;
            let mj = pairs.iter().map(|p| p.1).sum::<f64>() / t;
            let (mut sij, mut sii, mut sjj) = (0.0, 0.0, 0.0);
            for (a, b) in &pairs {
                let (da, db) = (a - mi, b - mj);
                sij += da * db;
                sii += da * da;
                sjj += db * db;
            }
            if sii == 0.0 {
                return Err(GraphError::ZeroVarianceStation(ids[i].clone()));
            }
            if sjj == 0.0 {
                return Err(GraphError::ZeroVarianceStation(ids[j].clone()));
            }
            let r = (sij / libm::sqrt(sii * sjj)).clamp(-1.0, 1.0);
            rho[i * n + j] = r;
            rho[j * n + i] = r;
        }
    }
    Ok(rho)
}

/// `w_i = 1 + |ξ_i| + σ_i / max_j σ_j`.
pub fn station_weights(descriptors: &[GpdDescriptors]) -> Result<Vec<f64>, GraphError> {
    if descriptors.is_empty() || descriptors.iter().any(|d| !(d.sigma > 0.0) || !d.xi.is_finite()) {
        return Err(GraphError::MissingDescriptors);
    }
    let max_sigma = descriptors.iter().map(|d| d.sigma).fold(f64::MIN, f64::max);
    Ok(descriptors
        .iter()
        .map(|d| 1.0 + d.xi.abs() + d.sigma / max_sigma)
        .collect())
}

/// `a_ij = ρ'_ij · w_i · w_j`. With `sparsify`, off-diagonal entries whose
/// magnitude falls below the threshold become exact zeros.
pub fn weighted_adjacency(
    rho: &[f64],
    w: &[f64],
    sparsify: Option<f64>,
    policy: NegativeCorrelation,
) -> Result<Vec<f64>, GraphError> {
    let n = w.len();
    if rho.len() != n * n {
        return Err(GraphError::ShapeMismatch(alloc::format!(
            "rho has {} entries, weights imply {}",
            rho.len(),
            n * n
        )));
    }
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let r = match policy {
                NegativeCorrelation::Clamp => rho[i * n + j].max(0.0),
                NegativeCorrelation::Keep => rho[i * n + j],
            };
            let mut v = r * (w[i] * w[j]);
            if let Some(thr) = sparsify {
                if i != j && v.abs() < thr {
                    v = 0.0;
                }
            }
            a[i * n + j] = v;
        }
    }
    Ok(a)
}

/// Whether every node reaches every other along positive entries.
pub fn is_connected(a: &[f64], n: usize) -> bool {
    if n == 0 {
        return true;
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            if !seen[j] && (a[i * n + j] > 0.0 || a[j * n + i] > 0.0) {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub station_ids: Vec<String>,
    pub rho: Vec<f64>,
    pub w: Vec<f64>,
    pub a: Vec<f64>,
    pub sparsify_threshold: Option<f64>,
    pub negative: NegativeCorrelation,
}

impl GraphSpec {
    pub fn new(
        station_ids: Vec<String>,
        rho: Vec<f64>,
        w: Vec<f64>,
        sparsify_threshold: Option<f64>,
        negative: NegativeCorrelation,
    ) -> Result<Self, GraphError> {
        if station_ids.len() != w.len() {
            return Err(GraphError::ShapeMismatch(alloc::format!(
                "{} stations, {} weights",
                station_ids.len(),
                w.len()
            )));
        }
        let a = weighted_adjacency(&rho, &w, sparsify_threshold, negative)?;
        if sparsify_threshold.is_some() && !is_connected(&a, w.len()) {
            log::warn!("sparsified station graph is disconnected");
        }
        Ok(Self {
            station_ids,
            rho,
            w,
            a,
            sparsify_threshold,
            negative,
        })
    }

    pub fn n(&self) -> usize {
        self.station_ids.len()
    }

    /// Reorders stations by `perm`, where new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n();
        let pick = |m: &[f64]| {
            let mut out = vec![0.0; n * n];
            for (i, &pi) in perm.iter().enumerate() {
                for (j, &pj) in perm.iter().enumerate() {
                    out[i * n + j] = m[pi * n + pj];
                }
            }
            out
        };
        Self {
            station_ids: perm.iter().map(|&p| self.station_ids[p].clone()).collect(),
            rho: pick(&self.rho),
            w: perm.iter().map(|&p| self.w[p]).collect(),
            a: pick(&self.a),
            sparsify_threshold: self.sparsify_threshold,
            negative: self.negative,
        }
    }
}
