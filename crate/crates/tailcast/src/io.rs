//! CSV and JSON formats.
//!
//! A dataset directory holds `stations.csv` (`station_id,name,lon,lat`) and one
//! `<station_id>.csv` per station with the columns
//! `station_id,date,t_max,t_min,t_avg,t_dew,rh,wind,precip,pressure`. Dates
//! are `YYYY-MM-DD` and an empty cell is a missing value.

use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use tailcast_core::evt::GpdDescriptors;
use tailcast_core::graph::GraphSpec;
use tailcast_core::ingest::{DailyRecord, HourlyRecord, IngestError, StationMeta, StationSeries, DAILY_FIELDS};
use tailcast_core::metrics::CurvePoint;
use tailcast_core::training::EpochRecord;

pub const META_FILE: &str = "stations.csv";
pub const DAILY_HEADER: [&str; 10] = [
    "station_id", "date", "t_max", "t_min", "t_avg", "t_dew", "rh", "wind", "precip", "pressure",
];
pub const HOURLY_HEADER: [&str; 8] = ["station_id", "timestamp", "temp", "t_dew", "rh", "wind", "precip", "pressure"];

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Ingest { path: PathBuf, source: IngestError },
    #[error("{path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
}

impl FormatError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    fn csv(path: &Path, source: csv::Error) -> Self {
        Self::Csv {
            path: path.into(),
            source,
        }
    }

    fn ingest(path: &Path, source: IngestError) -> Self {
        Self::Ingest {
            path: path.into(),
            source,
        }
    }

    fn invalid(path: &Path, reason: impl Into<String>) -> Self {
        Self::Invalid {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, FormatError>;

/// Where one daily field comes from in a source file, and how to convert it:
/// `value = raw * scale + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSource {
    pub header: String,
    pub scale: f64,
    pub offset: f64,
}

impl FieldSource {
    pub fn named(header: &str) -> Self {
        Self {
            header: header.into(),
            scale: 1.0,
            offset: 0.0,
        }
    }
}

/// Column mapping from a source CSV onto the daily record fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMap {
    pub station_id: String,
    pub date: String,
    /// In [`DAILY_FIELDS`] order.
    pub fields: [FieldSource; 8],
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            station_id: "station_id".into(),
            date: "date".into(),
            fields: DAILY_FIELDS.map(FieldSource::named),
        }
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> std::result::Result<usize, IngestError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| IngestError::MissingColumn(name.into()))
}

fn cell(value: &str, line: usize, name: &str) -> std::result::Result<Option<f64>, IngestError> {
    let v = value.trim();
    if v.is_empty() {
        return Ok(None);
    }
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .map(Some)
        .ok_or_else(|| IngestError::MalformedRow {
            line,
            reason: format!("{name}: cannot parse `{v}` as a number"),
        })
}

/// Parses one station's daily CSV. Rows must all carry `meta.station_id`.
pub fn parse_station_csv(
    reader: impl Read,
    schema: &ColumnMap,
    meta: StationMeta,
) -> std::result::Result<StationSeries, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| IngestError::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let id_col = column(&headers, &schema.station_id)?;
    let date_col = column(&headers, &schema.date)?;
    let field_cols = schema
        .fields
        .iter()
        .map(|f| column(&headers, &f.header))
        .collect::<std::result::Result<Vec<_>, _>>()?;

    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| IngestError::MalformedRow {
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let get = |i: usize| row.get(i).unwrap_or("");
        if get(id_col).trim() != meta.station_id {
            return Err(IngestError::MalformedRow {
                line,
                reason: format!("station id `{}`, expected `{}`", get(id_col).trim(), meta.station_id),
            });
        }
        let date = NaiveDate::parse_from_str(get(date_col).trim(), "%Y-%m-%d").map_err(|_| IngestError::MalformedRow {
            line,
            reason: format!("cannot parse date `{}`", get(date_col).trim()),
        })?;
        let mut rec = DailyRecord::missing(date);
        for (k, (src, &col)) in schema.fields.iter().zip(&field_cols).enumerate() {
            let v = cell(get(col), line, &src.header)?.map(|x| x * src.scale + src.offset);
            rec.set_field(k, v);
        }
        rec.check().map_err(|reason| IngestError::MalformedRow { line, reason })?;
        records.push(rec);
    }
    StationSeries::new(meta, records)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the canonical daily schema.
pub fn write_station_csv(writer: impl Write, series: &StationSeries) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(DAILY_HEADER)?;
    for r in series.records() {
        let mut row = vec![series.id().to_string(), r.date.format("%Y-%m-%d").to_string()];
        row.extend(r.fields().iter().map(|v| fmt_opt(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, serde::Deserialize, Serialize)]
struct MetaRow {
    station_id: String,
    name: String,
    lon: f64,
    lat: f64,
}

pub fn parse_meta_csv(reader: impl Read) -> std::result::Result<Vec<StationMeta>, IngestError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| IngestError::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    for name in ["station_id", "name", "lon", "lat"] {
        column(&headers, name)?;
    }
    let mut out = Vec::new();
    for row in rdr.deserialize::<MetaRow>() {
        let row = row.map_err(|e| IngestError::MalformedRow {
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        out.push(StationMeta::new(row.station_id, row.name, row.lon, row.lat)?);
    }
    Ok(out)
}

pub fn write_meta_csv(writer: impl Write, metas: &[StationMeta]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for m in metas {
        w.serialize(MetaRow {
            station_id: m.station_id.clone(),
            name: m.name.clone(),
            lon: m.lon,
            lat: m.lat,
        })?;
    }
    w.flush()?;
    Ok(())
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| FormatError::io(path, e))
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    }
    File::create(path).map_err(|e| FormatError::io(path, e))
}

pub fn station_file(dir: &Path, station_id: &str) -> PathBuf {
    dir.join(format!("{station_id}.csv"))
}

pub fn read_meta(dir: &Path) -> Result<Vec<StationMeta>> {
    let path = dir.join(META_FILE);
    let metas = parse_meta_csv(open(&path)?).map_err(|e| FormatError::ingest(&path, e))?;
    if metas.is_empty() {
        return Err(FormatError::invalid(&path, "no stations listed"));
    }
    Ok(metas)
}

/// Loads every station listed in `stations.csv`, in that order.
pub fn read_dataset(dir: &Path, schema: &ColumnMap) -> Result<Vec<StationSeries>> {
    read_meta(dir)?
        .into_iter()
        .map(|m| {
            let path = station_file(dir, &m.station_id);
            parse_station_csv(open(&path)?, schema, m).map_err(|e| FormatError::ingest(&path, e))
        })
        .collect()
}

pub fn write_dataset(dir: &Path, series: &[StationSeries]) -> Result<()> {
    let metas: Vec<StationMeta> = series.iter().map(|s| s.meta.clone()).collect();
    let path = dir.join(META_FILE);
    write_meta_csv(create(&path)?, &metas).map_err(|e| FormatError::csv(&path, e))?;
    for s in series {
        let path = station_file(dir, s.id());
        write_station_csv(create(&path)?, s).map_err(|e| FormatError::csv(&path, e))?;
    }
    Ok(())
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Parses hourly observations:
/// `station_id,timestamp,temp,t_dew,rh,wind,precip,pressure`.
pub fn parse_hourly_csv(reader: impl Read, station_id: &str) -> std::result::Result<Vec<HourlyRecord>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| IngestError::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let cols = HOURLY_HEADER
        .iter()
        .map(|h| column(&headers, h))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| IngestError::MalformedRow {
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let get = |k: usize| row.get(cols[k]).unwrap_or("").trim();
        if get(0) != station_id {
            return Err(IngestError::MalformedRow {
                line,
                reason: format!("station id `{}`, expected `{station_id}`", get(0)),
            });
        }
        let timestamp = parse_timestamp(get(1)).ok_or_else(|| IngestError::MalformedRow {
            line,
            reason: format!("cannot parse timestamp `{}`", get(1)),
        })?;
        let num = |k: usize| cell(get(k), line, HOURLY_HEADER[k]);
        out.push(HourlyRecord {
            timestamp,
            temp: num(2)?,
            t_dew: num(3)?,
            rh: num(4)?,
            wind: num(5)?,
            precip: num(6)?,
            pressure: num(7)?,
        });
    }
    Ok(out)
}

pub fn read_hourly_station(dir: &Path, meta: &StationMeta) -> Result<Vec<HourlyRecord>> {
    let path = station_file(dir, &meta.station_id);
    parse_hourly_csv(open(&path)?, &meta.station_id).map_err(|e| FormatError::ingest(&path, e))
}

/// Serializes rows with a header derived from the row type.
pub fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(|e| FormatError::csv(path, e))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

pub fn write_epochs(path: &Path, epochs: &[EpochRecord]) -> Result<()> {
    write_rows(path, epochs)
}

pub fn write_curve(path: &Path, points: &[CurvePoint]) -> Result<()> {
    write_rows(path, points)
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct FitRow {
    pub station_id: String,
    pub u: Option<f64>,
    pub xi: Option<f64>,
    pub sigma: Option<f64>,
    pub mu: Option<f64>,
    pub variance: Option<f64>,
    pub q95: Option<f64>,
    pub n_exceed: Option<usize>,
    pub converged: bool,
}

impl FitRow {
    pub fn fitted(station_id: &str, d: &GpdDescriptors) -> Self {
        Self {
            station_id: station_id.into(),
            u: Some(d.threshold_u),
            xi: Some(d.xi),
            sigma: Some(d.sigma),
            mu: Some(d.mu),
            variance: Some(d.variance),
            q95: Some(d.q95),
            n_exceed: Some(d.n_exceed),
            converged: d.converged,
        }
    }

    /// A station whose fit failed; threshold and count are kept when known.
    pub fn failed(station_id: &str, u: Option<f64>, n_exceed: Option<usize>) -> Self {
        Self {
            station_id: station_id.into(),
            u,
            xi: None,
            sigma: None,
            mu: None,
            variance: None,
            q95: None,
            n_exceed,
            converged: false,
        }
    }
}

pub fn read_fit_report(path: &Path) -> Result<Vec<FitRow>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    rdr.deserialize().collect::<csv::Result<_>>().map_err(|e| FormatError::csv(path, e))
}

/// Square matrix with a `station_id` header row and a leading id column.
pub fn write_matrix(path: &Path, ids: &[String], values: &[f64]) -> Result<()> {
    let n = ids.len();
    if values.len() != n * n {
        return Err(FormatError::invalid(path, format!("{} values for {n} stations", values.len())));
    }
    let mut w = csv::Writer::from_writer(create(path)?);
    let header: Vec<&str> = std::iter::once("station_id").chain(ids.iter().map(String::as_str)).collect();
    w.write_record(&header).map_err(|e| FormatError::csv(path, e))?;
    for (i, id) in ids.iter().enumerate() {
        let row: Vec<String> = std::iter::once(id.clone())
            .chain(values[i * n..(i + 1) * n].iter().map(f64::to_string))
            .collect();
        w.write_record(&row).map_err(|e| FormatError::csv(path, e))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<(Vec<String>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let ids: Vec<String> = rdr
        .headers()
        .map_err(|e| FormatError::csv(path, e))?
        .iter()
        .skip(1)
        .map(String::from)
        .collect();
    let mut values = Vec::with_capacity(ids.len() * ids.len());
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| FormatError::csv(path, e))?;
        if row.get(0) != ids.get(i).map(String::as_str) {
            return Err(FormatError::invalid(path, format!("row {} is not labeled `{}`", i + 1, ids[i])));
        }
        for v in row.iter().skip(1) {
            values.push(
                v.parse::<f64>()
                    .map_err(|_| FormatError::invalid(path, format!("cannot parse `{v}`")))?,
            );
        }
    }
    if values.len() != ids.len() * ids.len() {
        return Err(FormatError::invalid(path, "matrix is not square"));
    }
    Ok((ids, values))
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct WeightRow {
    pub station_id: String,
    pub w: f64,
    pub xi: Option<f64>,
    pub sigma: Option<f64>,
}

/// Writes the raw and effective adjacency matrices and the station weights.
pub fn write_graph(dir: &Path, graph: &GraphSpec, descriptors: Option<&[GpdDescriptors]>) -> Result<()> {
    write_matrix(&dir.join("adjacency_rho.csv"), &graph.station_ids, &graph.rho)?;
    write_matrix(&dir.join("adjacency_effective.csv"), &graph.station_ids, &graph.a)?;
    let rows = graph.station_ids.iter().enumerate().map(|(i, id)| WeightRow {
        station_id: id.clone(),
        w: graph.w[i],
        xi: descriptors.map(|d| d[i].xi),
        sigma: descriptors.map(|d| d[i].sigma),
    });
    write_rows(&dir.join("station_weights.csv"), rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelRow<'a> {
    pub station_id: &'a str,
    pub date: NaiveDate,
    pub label: u8,
}

pub fn write_labels(path: &Path, series: &[StationSeries], labels: &[Vec<bool>]) -> Result<()> {
    let rows = series.iter().zip(labels).flat_map(|(s, l)| {
        s.records().iter().zip(l).map(move |(r, &on)| LabelRow {
            station_id: s.id(),
            date: r.date,
            label: u8::from(on),
        })
    });
    write_rows(path, rows)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| FormatError::Json {
        path: path.into(),
        source: e,
    })?;
    f.write_all(b"\n").map_err(|e| FormatError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(std::io::BufReader::new(open(path)?)).map_err(|e| FormatError::Json {
        path: path.into(),
        source: e,
    })
}
