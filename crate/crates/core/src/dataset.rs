//! Heatwave labels, per-day feature vectors, normalization and sliding
//! windows over a station panel.
//!
//! The panel stores every feature for every (day, station) once, as a dense
//! `[T, N, F]` array. Windows are kept as anchor-day indices and materialized
//! on demand, so a 15-year, 71-station run never holds thousands of
//! overlapping copies of the same days.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::{doy_encoding, is_summer, next_day};
use crate::evt::GpdDescriptors;
use crate::ingest::StationSeries;
use crate::stats;

pub const DEFAULT_MIN_RUN: usize = 3;
pub const MIN_TRAINING_SUMMERS: usize = 3;
/// Standard deviations below this leave the feature unscaled.
pub const MIN_SD: f64 = 1e-12;

/// Base feature order. The label channel comes first and is never scaled.
pub const BASE_FEATURES: [&str; 13] = [
    "beta", "t_max", "t_min", "t_avg", "t_dew", "rh", "wind", "precip", "pressure", "lon", "lat", "doy_sin",
    "doy_cos",
];
pub const BASE_UNITS: [&str; 13] = [
    "binary", "degC", "degC", "degC", "degC", "percent", "m/s", "mm", "kPa", "deg_east", "deg_north", "unitless",
    "unitless",
];
/// Tail descriptors appended in distribution-informed mode.
pub const DI_FEATURES: [&str; 5] = ["gpd_xi", "gpd_sigma", "mu", "variance", "q95"];
pub const DI_UNITS: [&str; 5] = ["unitless", "degC", "degC", "degC^2", "degC"];
pub const LABEL_CHANNEL: usize = 0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("station {station}: {summers} training summers, need at least {MIN_TRAINING_SUMMERS}")]
    TooFewObservations { station: String, summers: usize },
    #[error("station {0}: tail descriptors required in di mode")]
    MissingDescriptors(String),
    #[error("station {station}: {labels} labels for {days} days")]
    MisalignedLabels { station: String, labels: usize, days: usize },
    #[error("no station series given")]
    NoStations,
    #[error("invalid split: train_end {train_end} must precede val_start {val_start}")]
    InvalidSplit { train_end: NaiveDate, val_start: NaiveDate },
    #[error("window lengths must be at least 1 (c_in = {c_in}, c_out = {c_out})")]
    InvalidWindow { c_in: usize, c_out: usize },
    #[error("no complete window fits the data")]
    EmptyWindowSet,
    #[error("normalization fitted on no days")]
    EmptyTrainingPeriod,
    #[error("feature width {got} does not match normalization width {expected}")]
    FeatureMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    Baseline,
    #[default]
    Di,
}

impl FeatureMode {
    pub fn n_features(self) -> usize {
        match self {
            FeatureMode::Baseline => BASE_FEATURES.len(),
            FeatureMode::Di => BASE_FEATURES.len() + DI_FEATURES.len(),
        }
    }

    pub fn feature_names(self) -> Vec<&'static str> {
        let mut names = BASE_FEATURES.to_vec();
        if self == FeatureMode::Di {
            names.extend_from_slice(&DI_FEATURES);
        }
        names
    }

    pub fn feature_units(self) -> Vec<&'static str> {
        let mut units = BASE_UNITS.to_vec();
        if self == FeatureMode::Di {
            units.extend_from_slice(&DI_UNITS);
        }
        units
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::Baseline => "baseline",
            FeatureMode::Di => "di",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDay {
    pub date: NaiveDate,
    pub station_id: String,
    pub label: bool,
}

/// Type-7 90th percentile of summer values. The caller restricts `t_max` to
/// the training period.
pub fn compute_t90(station: &str, t_max: &[(NaiveDate, f64)]) -> Result<f64, DatasetError> {
    let summer: Vec<(NaiveDate, f64)> = t_max
        .iter()
        .copied()
        .filter(|(d, v)| is_summer(*d) && v.is_finite())
        .collect();
    let summers: BTreeSet<i32> = summer.iter().map(|(d, _)| d.year()).collect();
    if summers.len() < MIN_TRAINING_SUMMERS {
        return Err(DatasetError::TooFewObservations {
            station: station.into(),
            summers: summers.len(),
        });
    }
    let values: Vec<f64> = summer.into_iter().map(|(_, v)| v).collect();
    Ok(stats::quantile(&values, 0.9))
}

/// Marks every day inside a maximal run of at least `min_run` consecutive
/// summer days with `t_max > t90`. Missing dates and non-summer days break
/// runs.
pub fn label_pkl(t_max: &[(NaiveDate, f64)], t90: f64, min_run: usize) -> Vec<bool> {
    let mut labels = vec![false; t_max.len()];
    let mut start = 0;
    let mut len = 0;
    let mut prev: Option<NaiveDate> = None;
    let close = |labels: &mut [bool], start: usize, len: usize| {
        if len >= min_run.max(1) {
            labels[start..start + len].iter_mut().for_each(|l| *l = true);
        }
    };
    for (i, &(date, v)) in t_max.iter().enumerate() {
        let hot = is_summer(date) && v > t90;
        let contiguous = prev.is_some_and(|p| next_day(p) == date);
        if hot && len > 0 && contiguous {
            len += 1;
        } else {
            close(&mut labels, start, len);
            if hot {
                start = i;
                len = 1;
            } else {
                len = 0;
            }
        }
        prev = Some(date);
    }
    close(&mut labels, start, len);
    labels
}

pub fn labeled_days(series: &StationSeries, labels: &[bool]) -> Vec<LabeledDay> {
    series
        .records()
        .iter()
        .zip(labels)
        .map(|(r, &label)| LabeledDay {
            date: r.date,
            station_id: series.id().into(),
            label,
        })
        .collect()
}

/// One feature vector per record. Records with missing fields produce `None`.
pub fn build_features(
    series: &StationSeries,
    labels: &[bool],
    descriptors: Option<&GpdDescriptors>,
    mode: FeatureMode,
) -> Result<Vec<Option<Vec<f64>>>, DatasetError> {
    if labels.len() != series.len() {
        return Err(DatasetError::MisalignedLabels {
            station: series.id().into(),
            labels: labels.len(),
            days: series.len(),
        });
    }
    let tail = match (mode, descriptors) {
        (FeatureMode::Di, None) => return Err(DatasetError::MissingDescriptors(series.id().into())),
        (FeatureMode::Di, Some(d)) => Some([d.xi, d.sigma, d.mu, d.variance, d.q95]),
        (FeatureMode::Baseline, _) => None,
    };
    let meta = &series.meta;
    Ok(series
        .records()
        .iter()
        .zip(labels)
        .map(|(r, &label)| {
            let f = r.fields();
            if f.iter().any(Option::is_none) {
                return None;
            }
            let (doy_sin, doy_cos) = doy_encoding(r.date);
            let mut v = Vec::with_capacity(mode.n_features());
            v.push(if label { 1.0 } else { 0.0 });
            v.extend(f.iter().map(|x| x.unwrap()));
            v.extend_from_slice(&[meta.lon, meta.lat, doy_sin, doy_cos]);
            if let Some(t) = tail {
                v.extend_from_slice(&t);
            }
            Some(v)
        })
        .collect())
}

/// Features and labels for all stations on a common contiguous calendar.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub dates: Vec<NaiveDate>,
    pub station_ids: Vec<String>,
    pub n_features: usize,
    /// `[T, N, F]`
    pub features: Vec<f64>,
    /// `[T, N]`, 0 or 1.
    pub labels: Vec<f64>,
    /// A day is usable only if every station has a complete record.
    pub valid: Vec<bool>,
}

impl Panel {
    /// `labels[s]` aligns with `series[s].records()`.
    pub fn build(
        series: &[StationSeries],
        labels: &[Vec<bool>],
        descriptors: Option<&[GpdDescriptors]>,
        mode: FeatureMode,
    ) -> Result<Self, DatasetError> {
        let first = series.iter().filter_map(|s| s.first_date()).min().ok_or(DatasetError::NoStations)?;
        let last = series.iter().filter_map(|s| s.last_date()).max().ok_or(DatasetError::NoStations)?;
        let n_days = (last - first).num_days() as usize + 1;
        let n = series.len();
        let f = mode.n_features();
        let mut features = vec![0.0; n_days * n * f];
        let mut panel_labels = vec![0.0; n_days * n];
        let mut present = vec![0usize; n_days];
        for (s, st) in series.iter().enumerate() {
            let d = descriptors.and_then(|d| d.get(s));
            let rows = build_features(st, &labels[s], d, mode)?;
            for ((rec, row), &label) in st.records().iter().zip(rows).zip(&labels[s]) {
                let Some(row) = row else { continue };
                let t = (rec.date - first).num_days() as usize;
                features[(t * n + s) * f..(t * n + s + 1) * f].copy_from_slice(&row);
                panel_labels[t * n + s] = if label { 1.0 } else { 0.0 };
                present[t] += 1;
            }
        }
        let mut dates = Vec::with_capacity(n_days);
        let mut d = first;
        for _ in 0..n_days {
            dates.push(d);
            d = next_day(d);
        }
        Ok(Self {
            dates,
            station_ids: series.iter().map(|s| s.id().into()).collect(),
            n_features: f,
            features,
            labels: panel_labels,
            valid: present.into_iter().map(|c| c == n).collect(),
        })
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn n_stations(&self) -> usize {
        self.station_ids.len()
    }

    pub fn row(&self, t: usize, s: usize) -> &[f64] {
        let f = self.n_features;
        let i = (t * self.n_stations() + s) * f;
        &self.features[i..i + f]
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let first = *self.dates.first()?;
        let t = (date - first).num_days();
        (t >= 0 && (t as usize) < self.dates.len()).then_some(t as usize)
    }

    /// Inputs for days `anchor − c_in + 1 ..= anchor` and targets for
    /// `anchor + 1 ..= anchor + c_out`.
    pub fn window(&self, anchor: usize, c_in: usize, c_out: usize) -> WindowSample {
        let n = self.n_stations();
        let f = self.n_features;
        let lo = (anchor + 1 - c_in) * n * f;
        let hi = (anchor + 1) * n * f;
        WindowSample {
            x: self.features[lo..hi].to_vec(),
            y: self.labels[(anchor + 1) * n..(anchor + 1 + c_out) * n].to_vec(),
            anchor_date: self.dates[anchor],
            c_in,
            c_out,
            n_stations: n,
            n_features: f,
        }
    }

    /// Fraction of positive labels over valid summer station-days.
    pub fn summer_positive_fraction(&self) -> f64 {
        let n = self.n_stations();
        let (mut pos, mut total) = (0.0, 0.0);
        for t in 0..self.n_days() {
            if self.valid[t] && is_summer(self.dates[t]) {
                pos += self.labels[t * n..(t + 1) * n].iter().sum::<f64>();
                total += n as f64;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            pos / total
        }
    }

    pub fn normalize(&mut self, stats: &NormStats) -> Result<(), DatasetError> {
        if stats.mean.len() != self.n_features {
            return Err(DatasetError::FeatureMismatch {
                expected: stats.mean.len(),
                got: self.n_features,
            });
        }
        for row in self.features.chunks_exact_mut(self.n_features) {
            stats.apply(row);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// `[c_in, N, F]`
    pub x: Vec<f64>,
    /// `[c_out, N]`
    pub y: Vec<f64>,
    pub anchor_date: NaiveDate,
    pub c_in: usize,
    pub c_out: usize,
    pub n_stations: usize,
    pub n_features: usize,
}

/// Per-feature z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// `false` for the label channel and for dimensions that were constant
    /// over the fitting days.
    pub scaled: Vec<bool>,
}

impl NormStats {
    /// Population mean and standard deviation over every station on the
    /// valid days in `days`.
    pub fn fit(panel: &Panel, names: &[&str], days: impl IntoIterator<Item = usize>) -> Result<Self, DatasetError> {
        let f = panel.n_features;
        let n = panel.n_stations();
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); f];
        for t in days {
            if !panel.valid[t] {
                continue;
            }
            for s in 0..n {
                for (k, v) in panel.row(t, s).iter().enumerate() {
                    columns[k].push(*v);
                }
            }
        }
        if columns[0].is_empty() {
            return Err(DatasetError::EmptyTrainingPeriod);
        }
        let mut out = Self {
            mean: vec![0.0; f],
            sd: vec![1.0; f],
            scaled: vec![false; f],
        };
        for (k, col) in columns.iter().enumerate() {
            if k == LABEL_CHANNEL {
                continue;
            }
            let m = stats::mean(col);
            let sd = stats::population_sd(col);
            if sd < MIN_SD {
                log::warn!(
                    "feature `{}` is constant over the training days; left unscaled",
                    names.get(k).copied().unwrap_or("?")
                );
                continue;
            }
            out.mean[k] = m;
            out.sd[k] = sd;
            out.scaled[k] = true;
        }
        Ok(out)
    }

    pub fn apply(&self, row: &mut [f64]) {
        for (k, v) in row.iter_mut().enumerate() {
            if self.scaled[k] {
                *v = (*v - self.mean[k]) / self.sd[k];
            }
        }
    }

    /// Names of the dimensions that pass through unscaled, label excluded.
    pub fn passthrough<'a>(&self, names: &[&'a str]) -> Vec<&'a str> {
        (0..self.scaled.len())
            .filter(|&k| k != LABEL_CHANNEL && !self.scaled[k])
            .filter_map(|k| names.get(k).copied())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_end: NaiveDate,
    pub val_start: NaiveDate,
}

impl SplitSpec {
    pub fn new(train_end: NaiveDate, val_start: NaiveDate) -> Result<Self, DatasetError> {
        if train_end >= val_start {
            return Err(DatasetError::InvalidSplit { train_end, val_start });
        }
        Ok(Self { train_end, val_start })
    }

    /// Holds out the last `val_years` calendar years ending at `last`.
    pub fn last_years(last: NaiveDate, val_years: i32) -> Result<Self, DatasetError> {
        let start_year = last.year() - val_years + 1;
        let val_start = NaiveDate::from_ymd_opt(start_year, 1, 1).unwrap_or(last);
        let train_end = NaiveDate::from_ymd_opt(start_year - 1, 12, 31).unwrap_or(last);
        Self::new(train_end, val_start)
    }
}

/// Window anchors, by panel day index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WindowSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    /// Every gap-free anchor, including the ones that straddle the split.
    pub all: Vec<usize>,
}

/// Stride-1 windows. Training windows end their targets by `train_end`;
/// validation windows start their inputs on or after `val_start`. Windows
/// touching an invalid day belong to neither.
pub fn make_windows(panel: &Panel, c_in: usize, c_out: usize, split: &SplitSpec) -> Result<WindowSplit, DatasetError> {
    if c_in == 0 || c_out == 0 {
        return Err(DatasetError::InvalidWindow { c_in, c_out });
    }
    let t_len = panel.n_days();
    if t_len < c_in + c_out {
        return Err(DatasetError::EmptyWindowSet);
    }
    let mut out = WindowSplit::default();
    let clean_until: Vec<usize> = panel
        .valid
        .iter()
        .scan(0usize, |run, &ok| {
            *run = if ok { *run + 1 } else { 0 };
            Some(*run)
        })
        .collect();
    for anchor in (c_in - 1)..(t_len - c_out) {
        let last = anchor + c_out;
        if clean_until[last] < c_in + c_out {
            continue;
        }
        out.all.push(anchor);
        let first_input = panel.dates[anchor + 1 - c_in];
        if panel.dates[last] <= split.train_end {
            out.train.push(anchor);
        } else if first_input >= split.val_start {
            out.val.push(anchor);
        }
    }
    if out.all.is_empty() {
        return Err(DatasetError::EmptyWindowSet);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{DailyRecord, StationMeta};

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn days_from(start: NaiveDate, values: &[f64]) -> Vec<(NaiveDate, f64)> {
        let mut out = Vec::new();
        let mut date = start;
        for &v in values {
            out.push((date, v));
            date = next_day(date);
        }
        out
    }

    fn series(id: &str, start: NaiveDate, t_max: &[f64]) -> StationSeries {
        let recs = days_from(start, t_max)
            .into_iter()
            .map(|(date, t)| DailyRecord {
                date,
                t_max: Some(t),
                t_min: Some(t - 8.0),
                t_avg: Some(t - 4.0),
                t_dew: Some(t - 10.0),
                rh: Some(50.0),
                wind: Some(2.0),
                precip: Some(0.0),
                pressure: Some(101.0),
            })
            .collect();
        StationSeries::new(StationMeta::new(id, id, -120.0, 50.0).unwrap(), recs).unwrap()
    }

    #[test]
    fn run_of_three_labeled() {
        let x = days_from(d(2020, 7, 1), &[0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        let l = label_pkl(&x, 0.5, 3);
        assert_eq!(l, [false, true, true, true, false, false, false]);
    }

    #[test]
    fn season_boundary_breaks_run() {
        let x = days_from(d(2020, 9, 29), &[5.0, 5.0, 5.0]);
        assert_eq!(label_pkl(&x, 1.0, 3), [false; 3]);
    }

    #[test]
    fn missing_date_breaks_run() {
        let x = [(d(2020, 7, 1), 5.0), (d(2020, 7, 2), 5.0), (d(2020, 7, 4), 5.0)];
        assert_eq!(label_pkl(&x, 1.0, 3), [false; 3]);
    }

    #[test]
    fn strict_threshold() {
        let x = days_from(d(2020, 7, 1), &[30.0; 5]);
        assert_eq!(label_pkl(&x, 30.0, 3), [false; 5]);
    }

    #[test]
    fn t90_needs_three_summers() {
        let two: Vec<_> = [2019, 2020].iter().map(|&y| (d(y, 7, 1), 1.0)).collect();
        assert!(matches!(
            compute_t90("x", &two),
            Err(DatasetError::TooFewObservations { summers: 2, .. })
        ));
    }

    #[test]
    fn baseline_features_and_doy_phase() {
        let s = series("a", d(2020, 1, 1), &[10.0, 11.0]);
        let rows = build_features(&s, &[false, true], None, FeatureMode::Baseline).unwrap();
        let r0 = rows[0].as_ref().unwrap();
        assert_eq!(r0.len(), 13);
        assert!(r0[11].abs() < 1e-15);
        assert_eq!(r0[12], 1.0);
        assert_eq!(rows[1].as_ref().unwrap()[0], 1.0);
        assert!(matches!(
            build_features(&s, &[false, true], None, FeatureMode::Di),
            Err(DatasetError::MissingDescriptors(_))
        ));
    }

    #[test]
    fn toy_window_count() {
        let s = series("a", d(2020, 1, 1), &[10.0; 20]);
        let labels = vec![vec![false; 20]];
        let p = Panel::build(&[s], &labels, None, FeatureMode::Baseline).unwrap();
        let split = SplitSpec::new(d(2020, 12, 30), d(2020, 12, 31)).unwrap();
        let w = make_windows(&p, 10, 3, &split).unwrap();
        assert_eq!(w.all.len(), 8);
        assert_eq!(w.train.len(), 8);
    }

    #[test]
    fn straddling_windows_dropped() {
        let s = series("a", d(2020, 1, 1), &[10.0; 20]);
        let p = Panel::build(&[s], &[vec![false; 20]], None, FeatureMode::Baseline).unwrap();
        let split = SplitSpec::new(d(2020, 1, 15), d(2020, 1, 16)).unwrap();
        let w = make_windows(&p, 10, 3, &split).unwrap();
        for &a in &w.train {
            assert!(p.dates[a + 3] <= split.train_end);
        }
        assert!(w.val.is_empty());
        assert_eq!(w.train, [9, 10, 11]);
    }

    #[test]
    fn gap_excludes_windows() {
        let s = series("a", d(2020, 1, 1), &[10.0; 30]);
        let mut recs = s.records().to_vec();
        recs[12].t_dew = None;
        let s = StationSeries::new(s.meta.clone(), recs).unwrap();
        let p = Panel::build(&[s], &[vec![false; 30]], None, FeatureMode::Baseline).unwrap();
        let split = SplitSpec::new(d(2020, 12, 30), d(2020, 12, 31)).unwrap();
        let w = make_windows(&p, 10, 3, &split).unwrap();
        assert_eq!(w.all, [22, 23, 24, 25, 26]);
    }

    #[test]
    fn normalization_definition() {
        let s = series("a", d(2020, 1, 1), &[8.0, 12.0]);
        let mut p = Panel::build(&[s], &[vec![false, true]], None, FeatureMode::Baseline).unwrap();
        let names = FeatureMode::Baseline.feature_names();
        let st = NormStats::fit(&p, &names, 0..2).unwrap();
        assert_eq!(st.mean[1], 10.0);
        assert_eq!(st.sd[1], 2.0);
        assert!(!st.scaled[LABEL_CHANNEL]);
        assert!(st.passthrough(&names).contains(&"rh"));
        p.normalize(&st).unwrap();
        assert_eq!(p.row(1, 0)[1], 1.0);
        assert_eq!(p.row(1, 0)[0], 1.0);
    }
}
