//! Station records: metadata, daily observations, hourly aggregation and gap
//! filling.
//!
//! Units are fixed here: °C, percent, m/s, mm and kPa. Anything that arrives in
//! other units is converted by the column mapping before it reaches these
//! types. Dates are calendar dates in station-local standard time.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::next_day;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("duplicate date {0}")]
    DuplicateDate(NaiveDate),
    #[error("invalid record on {date}: {reason}")]
    InvalidRecord { date: NaiveDate, reason: String },
    #[error("invalid station metadata: {0}")]
    InvalidMeta(String),
    #[error("duplicate station id `{0}`")]
    DuplicateStation(String),
    #[error("empty input")]
    EmptyInput,
    #[error("station {station}: gap {from}..={to} exceeds the interpolation limit")]
    GapTooLarge {
        station: String,
        from: NaiveDate,
        to: NaiveDate,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationMeta {
    pub station_id: String,
    pub name: String,
    /// Degrees east.
    pub lon: f64,
    /// Degrees north.
    pub lat: f64,
}

impl StationMeta {
    pub fn new(
        station_id: impl Into<String>,
        name: impl Into<String>,
        lon: f64,
        lat: f64,
    ) -> Result<Self, IngestError> {
        let station_id = station_id.into();
        if station_id.is_empty() {
            return Err(IngestError::InvalidMeta("empty station id".into()));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(IngestError::InvalidMeta(format!(
                "{station_id}: lon {lon} outside [-180, 180]"
            )));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(IngestError::InvalidMeta(format!(
                "{station_id}: lat {lat} outside [-90, 90]"
            )));
        }
        Ok(Self {
            station_id,
            name: name.into(),
            lon,
            lat,
        })
    }
}

/// One day of observations. `None` marks a missing value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyRecord {
    pub date: NaiveDate,
    pub t_max: Option<f64>,
    pub t_min: Option<f64>,
    pub t_avg: Option<f64>,
    pub t_dew: Option<f64>,
    /// Relative humidity, percent.
    pub rh: Option<f64>,
    /// Mean wind speed, m/s.
    pub wind: Option<f64>,
    /// Daily total, mm.
    pub precip: Option<f64>,
    /// Station pressure, kPa.
    pub pressure: Option<f64>,
}

/// Field names in canonical column order.
pub const DAILY_FIELDS: [&str; 8] = [
    "t_max", "t_min", "t_avg", "t_dew", "rh", "wind", "precip", "pressure",
];

impl DailyRecord {
    pub fn missing(date: NaiveDate) -> Self {
        Self {
            date,
            t_max: None,
            t_min: None,
            t_avg: None,
            t_dew: None,
            rh: None,
            wind: None,
            precip: None,
            pressure: None,
        }
    }

    /// Values in [`DAILY_FIELDS`] order.
    pub fn fields(&self) -> [Option<f64>; 8] {
        [
            self.t_max,
            self.t_min,
            self.t_avg,
            self.t_dew,
            self.rh,
            self.wind,
            self.precip,
            self.pressure,
        ]
    }

    pub fn set_field(&mut self, index: usize, value: Option<f64>) {
        match index {
            0 => self.t_max = value,
            1 => self.t_min = value,
            2 => self.t_avg = value,
            3 => self.t_dew = value,
            4 => self.rh = value,
            5 => self.wind = value,
            6 => self.precip = value,
            7 => self.pressure = value,
            _ => panic!("field index {index} out of range"),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.fields().iter().all(Option::is_some)
    }

    /// Range checks on present values; returns the first violation.
    pub fn check(&self) -> Result<(), String> {
        for (name, v) in DAILY_FIELDS.iter().zip(self.fields()) {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Err(format!("{name} is not finite"));
                }
            }
        }
        if let Some(rh) = self.rh {
            if !(0.0..=100.0).contains(&rh) {
                return Err(format!("rh {rh} outside [0, 100]"));
            }
        }
        if let Some(w) = self.wind {
            if w < 0.0 {
                return Err(format!("wind {w} negative"));
            }
        }
        if let Some(p) = self.precip {
            if p < 0.0 {
                return Err(format!("precip {p} negative"));
            }
        }
        if let Some(p) = self.pressure {
            if p <= 0.0 {
                return Err(format!("pressure {p} not positive"));
            }
        }
        if let (Some(lo), Some(mid), Some(hi)) = (self.t_min, self.t_avg, self.t_max) {
            if !(lo <= mid && mid <= hi) {
                return Err(format!("expected t_min <= t_avg <= t_max, got {lo}, {mid}, {hi}"));
            }
        } else if let (Some(lo), Some(hi)) = (self.t_min, self.t_max) {
            if lo > hi {
                return Err(format!("t_min {lo} above t_max {hi}"));
            }
        }
        Ok(())
    }
}

/// A station's daily record, strictly increasing in date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSeries {
    pub meta: StationMeta,
    records: Vec<DailyRecord>,
}

impl StationSeries {
    /// Sorts by date and validates every record.
    pub fn new(meta: StationMeta, mut records: Vec<DailyRecord>) -> Result<Self, IngestError> {
        records.sort_by_key(|r| r.date);
        for pair in records.windows(2) {
            if pair[0].date == pair[1].date {
                return Err(IngestError::DuplicateDate(pair[0].date));
            }
        }
        for r in &records {
            r.check().map_err(|reason| IngestError::InvalidRecord {
                date: r.date,
                reason,
            })?;
        }
        Ok(Self { meta, records })
    }

    pub fn records(&self) -> &[DailyRecord] {
        &self.records
    }

    pub fn id(&self) -> &str {
        &self.meta.station_id
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.records.first().map(|r| r.date)
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.records.last().map(|r| r.date)
    }

    /// `(date, t_max)` for every day where t_max is present.
    pub fn t_max_series(&self) -> Vec<(NaiveDate, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.t_max.map(|t| (r.date, t)))
            .collect()
    }

    pub fn has_missing(&self) -> bool {
        self.records.iter().any(|r| !r.is_complete())
    }
}

/// Fails with [`IngestError::DuplicateStation`] if two series share an id.
pub fn check_unique_ids(series: &[StationSeries]) -> Result<(), IngestError> {
    let mut seen = BTreeMap::new();
    for s in series {
        if seen.insert(s.id(), ()).is_some() {
            return Err(IngestError::DuplicateStation(s.id().into()));
        }
    }
    Ok(())
}

/// One hourly observation in station-local standard time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HourlyRecord {
    pub timestamp: NaiveDateTime,
    pub temp: Option<f64>,
    pub t_dew: Option<f64>,
    pub rh: Option<f64>,
    pub wind: Option<f64>,
    pub precip: Option<f64>,
    pub pressure: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregationConfig {
    /// Hourly temperature readings a day needs before its temperatures count.
    pub min_temp_hours: usize,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self { min_temp_hours: 18 }
    }
}

fn sorted_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

fn sorted_mean(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(sorted_sum(values) / values.len() as f64)
    }
}

/// Collapses hourly rows into one record per calendar day.
///
/// Temperatures give max/min/mean; wind, humidity, pressure and dew point are
/// means; precipitation is summed. A day with fewer than
/// `min_temp_hours` temperature readings gets missing temperatures.
pub fn aggregate_hourly_to_daily(
    hourly: &[HourlyRecord],
    config: &AggregationConfig,
) -> Result<Vec<DailyRecord>, IngestError> {
    if hourly.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    let mut by_day: BTreeMap<NaiveDate, Vec<&HourlyRecord>> = BTreeMap::new();
    for h in hourly {
        by_day.entry(h.timestamp.date()).or_default().push(h);
    }
    let mut out = Vec::with_capacity(by_day.len());
    for (date, rows) in by_day {
        let collect = |f: fn(&HourlyRecord) -> Option<f64>| -> Vec<f64> {
            rows.iter().filter_map(|r| f(r)).collect()
        };
        let mut rec = DailyRecord::missing(date);
        let mut temps = collect(|r| r.temp);
        if temps.len() >= config.min_temp_hours.max(1) {
            temps.sort_by(f64::total_cmp);
            rec.t_min = temps.first().copied();
            rec.t_max = temps.last().copied();
            rec.t_avg = sorted_mean(&mut temps);
        }
        rec.t_dew = sorted_mean(&mut collect(|r| r.t_dew));
        rec.rh = sorted_mean(&mut collect(|r| r.rh));
        rec.wind = sorted_mean(&mut collect(|r| r.wind));
        rec.pressure = sorted_mean(&mut collect(|r| r.pressure));
        let mut p = collect(|r| r.precip);
        rec.precip = if p.is_empty() {
            None
        } else {
            Some(sorted_sum(&mut p))
        };
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ImputePolicy {
    /// Remove every incomplete day.
    DropDay,
    /// Fill interior gaps of at most `max_gap_days` by linear interpolation.
    /// Longer gaps are dropped, or rejected when `forbid_drop` is set.
    LinearInterpolate {
        max_gap_days: usize,
        forbid_drop: bool,
    },
}

impl Default for ImputePolicy {
    fn default() -> Self {
        Self::LinearInterpolate {
            max_gap_days: 3,
            forbid_drop: false,
        }
    }
}

/// Returns a series with no missing values.
///
/// Absent dates inside the record are treated as fully missing days. Days that
/// cannot be filled under the policy are removed, which leaves a hole in the
/// calendar that downstream windowing will not cross.
pub fn impute_missing(
    series: &StationSeries,
    policy: ImputePolicy,
) -> Result<StationSeries, IngestError> {
    if !series.has_missing() && is_contiguous(series.records()) {
        return Ok(series.clone());
    }
    let (max_gap, forbid_drop) = match policy {
        ImputePolicy::DropDay => (0, false),
        ImputePolicy::LinearInterpolate {
            max_gap_days,
            forbid_drop,
        } => (max_gap_days, forbid_drop),
    };

    let mut days = reindexed(series.records());
    for field in 0..DAILY_FIELDS.len() {
        let values: Vec<Option<f64>> = days.iter().map(|d| d.fields()[field]).collect();
        let mut i = 0;
        while i < values.len() {
            if values[i].is_some() {
                i += 1;
                continue;
            }
            let start = i;
            while i < values.len() && values[i].is_none() {
                i += 1;
            }
            let len = i - start;
            let bounded = start > 0 && i < values.len();
            if bounded && len <= max_gap {
                let left = values[start - 1].unwrap();
                let right = values[i].unwrap();
                for k in 0..len {
                    let t = (k + 1) as f64 / (len + 1) as f64;
                    days[start + k].set_field(field, Some(left + t * (right - left)));
                }
            } else if forbid_drop {
                return Err(IngestError::GapTooLarge {
                    station: series.id().into(),
                    from: days[start].date,
                    to: days[i - 1].date,
                });
            }
        }
    }

    let mut kept = Vec::with_capacity(days.len());
    for mut d in days {
        if !d.is_complete() {
            continue;
        }
        // Fields interpolated over different gap lengths can cross slightly.
        let (lo, hi) = (d.t_min.unwrap(), d.t_max.unwrap());
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        d.t_min = Some(lo);
        d.t_max = Some(hi);
        d.t_avg = Some(d.t_avg.unwrap().clamp(lo, hi));
        kept.push(d);
    }
    StationSeries::new(series.meta.clone(), kept)
}

fn is_contiguous(records: &[DailyRecord]) -> bool {
    records
        .windows(2)
        .all(|w| next_day(w[0].date) == w[1].date)
}

fn reindexed(records: &[DailyRecord]) -> Vec<DailyRecord> {
    let mut out = Vec::with_capacity(records.len());
    let mut iter = records.iter().peekable();
    let Some(first) = records.first() else {
        return out;
    };
    let last = records.last().unwrap().date;
    let mut date = first.date;
    loop {
        match iter.peek() {
            Some(r) if r.date == date => {
                out.push(**r);
                iter.next();
            }
            _ => out.push(DailyRecord::missing(date)),
        }
        if date == last {
            break;
        }
        date = next_day(date);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use chrono::NaiveTime;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn meta() -> StationMeta {
        StationMeta::new("S1", "Test", -123.1, 49.2).unwrap()
    }

    fn full(date: NaiveDate, t_max: f64) -> DailyRecord {
        DailyRecord {
            date,
            t_max: Some(t_max),
            t_min: Some(t_max - 8.0),
            t_avg: Some(t_max - 4.0),
            t_dew: Some(t_max - 10.0),
            rh: Some(60.0),
            wind: Some(3.0),
            precip: Some(0.0),
            pressure: Some(101.0),
        }
    }

    fn hour(date: NaiveDate, h: u32, temp: f64) -> HourlyRecord {
        HourlyRecord {
            timestamp: date.and_time(NaiveTime::from_hms_opt(h, 0, 0).unwrap()),
            temp: Some(temp),
            t_dew: Some(1.0),
            rh: Some(50.0),
            wind: Some(2.0),
            precip: Some(0.5),
            pressure: Some(100.0),
        }
    }

    #[test]
    fn meta_ranges() {
        assert!(StationMeta::new("A", "", 181.0, 0.0).is_err());
        assert!(StationMeta::new("A", "", 0.0, -91.0).is_err());
        assert!(StationMeta::new("", "", 0.0, 0.0).is_err());
    }

    #[test]
    fn series_sorted_and_duplicate_rejected() {
        let s = StationSeries::new(
            meta(),
            vec![full(d(2021, 6, 3), 20.0), full(d(2021, 6, 1), 21.0), full(d(2021, 6, 2), 22.0)],
        )
        .unwrap();
        let dates: Vec<_> = s.records().iter().map(|r| r.date).collect();
        assert_eq!(dates, vec![d(2021, 6, 1), d(2021, 6, 2), d(2021, 6, 3)]);

        let err = StationSeries::new(meta(), vec![full(d(2021, 6, 28), 1.0), full(d(2021, 6, 28), 2.0)])
            .unwrap_err();
        assert_eq!(err, IngestError::DuplicateDate(d(2021, 6, 28)));
    }

    #[test]
    fn record_range_checks() {
        let mut r = full(d(2021, 1, 1), 10.0);
        r.rh = Some(112.0);
        assert!(r.check().is_err());
        let mut r = full(d(2021, 1, 1), 10.0);
        r.t_avg = Some(11.0);
        assert!(r.check().is_err());
    }

    #[test]
    fn constant_hourly_day() {
        let hourly: Vec<_> = (0..24).map(|h| hour(d(2021, 7, 1), h, 10.0)).collect();
        let days = aggregate_hourly_to_daily(&hourly, &AggregationConfig::default()).unwrap();
        assert_eq!(days.len(), 1);
        assert_eq!(days[0].t_max, Some(10.0));
        assert_eq!(days[0].t_min, Some(10.0));
        assert_eq!(days[0].t_avg, Some(10.0));
        assert_eq!(days[0].precip, Some(12.0));
    }

    #[test]
    fn three_reading_day() {
        let hourly = vec![hour(d(2021, 7, 1), 3, 5.0), hour(d(2021, 7, 1), 12, 25.0), hour(d(2021, 7, 1), 18, 15.0)];
        let cfg = AggregationConfig { min_temp_hours: 1 };
        let days = aggregate_hourly_to_daily(&hourly, &cfg).unwrap();
        assert_eq!(days[0].t_max, Some(25.0));
        assert_eq!(days[0].t_min, Some(5.0));
        assert_eq!(days[0].t_avg, Some(15.0));
    }

    #[test]
    fn incomplete_day_flagged() {
        let hourly: Vec<_> = (0..3).map(|h| hour(d(2021, 7, 1), h, 10.0)).collect();
        let cfg = AggregationConfig { min_temp_hours: 12 };
        let days = aggregate_hourly_to_daily(&hourly, &cfg).unwrap();
        assert_eq!(days[0].t_max, None);
        assert_eq!(days[0].t_avg, None);
        assert!(aggregate_hourly_to_daily(&[], &cfg).is_err());
    }

    #[test]
    fn midpoint_interpolation() {
        let mut gap = full(d(2021, 6, 2), 0.0);
        gap.t_max = None;
        gap.t_avg = None;
        let s = StationSeries::new(meta(), vec![full(d(2021, 6, 1), 10.0), gap, full(d(2021, 6, 3), 12.0)])
            .unwrap();
        let out = impute_missing(&s, ImputePolicy::default()).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out.records()[1].t_max, Some(11.0));
    }

    #[test]
    fn long_gap_rejected_or_dropped() {
        let mut recs = vec![full(d(2021, 6, 1), 10.0)];
        for day in 2..=6 {
            recs.push(DailyRecord::missing(d(2021, 6, day)));
        }
        recs.push(full(d(2021, 6, 7), 12.0));
        let s = StationSeries::new(meta(), recs).unwrap();
        let strict = ImputePolicy::LinearInterpolate { max_gap_days: 3, forbid_drop: true };
        assert!(matches!(impute_missing(&s, strict), Err(IngestError::GapTooLarge { .. })));
        let lenient = impute_missing(&s, ImputePolicy::default()).unwrap();
        assert_eq!(lenient.len(), 2);
    }

    #[test]
    fn absent_dates_are_gaps() {
        let s = StationSeries::new(meta(), vec![full(d(2021, 6, 1), 10.0), full(d(2021, 6, 3), 14.0)]).unwrap();
        let out = impute_missing(&s, ImputePolicy::default()).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out.records()[1].t_max, Some(12.0));
        let dropped = impute_missing(&s, ImputePolicy::DropDay).unwrap();
        assert_eq!(dropped.len(), 2);
    }

    #[test]
    fn complete_series_unchanged() {
        let s = StationSeries::new(meta(), vec![full(d(2021, 6, 1), 10.0), full(d(2021, 6, 2), 11.0)]).unwrap();
        assert_eq!(impute_missing(&s, ImputePolicy::default()).unwrap(), s);
    }
}
