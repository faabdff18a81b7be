//! One function per subcommand. Each reads its inputs, writes its outputs
//! under the configured output directory and returns what it wrote.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use tailcast_core::dataset::{FeatureMode, SplitSpec};
use tailcast_core::evt::{extract_exceedances, GpdDescriptors};
use tailcast_core::ingest::{
    aggregate_hourly_to_daily, impute_missing, AggregationConfig, ImputePolicy, StationSeries,
};
use tailcast_core::metrics::{self, MetricsReport};
use tailcast_core::model::{GraphContext, TrainedModel};
use tailcast_core::pipeline::{self, training_summer_t_max, Prepared};
use tailcast_core::training::{predict_windows, Predictions, TrainReport};

use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::error::Failure;
use crate::io::{self, ColumnMap, FitRow};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
pub const DATASET_MANIFEST_FILE: &str = "dataset_manifest.json";
pub const METRICS_FILE: &str = "metrics.json";

pub type Result<T> = std::result::Result<T, Failure>;

pub fn load_series(cfg: &RunConfig) -> Result<Vec<StationSeries>> {
    Ok(io::read_dataset(&cfg.data_dir, &ColumnMap::default())?)
}

/// Writes a synthetic dataset into `cfg.out_dir`.
pub fn synth(cfg: &RunConfig) -> Result<Vec<StationSeries>> {
    let synth = cfg.synth();
    let series = tailcast_core::synth::generate(&synth)?;
    io::write_dataset(&cfg.out_dir, &series)?;
    io::write_json(&cfg.out_dir.join("synth_config.json"), &synth)?;
    Ok(series)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub station_id: String,
    pub days_in: usize,
    pub incomplete_in: usize,
    pub days_out: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    pub input: PathBuf,
    pub hourly: bool,
    pub aggregation: AggregationConfig,
    pub impute: ImputePolicy,
}

/// Validates (and for hourly input, aggregates) every station, fills short
/// gaps and writes the canonical daily dataset to `cfg.out_dir`.
pub fn ingest(cfg: &RunConfig, opts: &IngestOptions) -> Result<Vec<IngestSummary>> {
    let metas = io::read_meta(&opts.input)?;
    let mut out = Vec::with_capacity(metas.len());
    let mut summary = Vec::with_capacity(metas.len());
    for meta in metas {
        let series = if opts.hourly {
            let hourly = io::read_hourly_station(&opts.input, &meta)?;
            let days = aggregate_hourly_to_daily(&hourly, &opts.aggregation)?;
            StationSeries::new(meta, days)?
        } else {
            let path = io::station_file(&opts.input, &meta.station_id);
            let file = std::fs::File::open(&path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
            io::parse_station_csv(file, &ColumnMap::default(), meta)
                .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?
        };
        let filled = impute_missing(&series, opts.impute)?;
        summary.push(IngestSummary {
            station_id: series.id().into(),
            days_in: series.len(),
            incomplete_in: series.records().iter().filter(|r| !r.is_complete()).count(),
            days_out: filled.len(),
        });
        out.push(filled);
    }
    tailcast_core::ingest::check_unique_ids(&out)?;
    io::write_dataset(&cfg.out_dir, &out)?;
    io::write_json(&cfg.out_dir.join("ingest_summary.json"), &summary)?;
    Ok(summary)
}

/// Per-station GPD fits on training-period summer maxima, written to
/// `evt_fit.csv`. Stations whose fit fails are listed with
/// `converged = false`.
pub fn fit_evt(cfg: &RunConfig) -> Result<Vec<FitRow>> {
    let series = load_series(cfg)?;
    let split = cfg.split(&series)?;
    let evt = cfg.evt();
    let descriptors = pipeline::station_descriptors(&series, split.train_end, &evt);
    let rows: Vec<FitRow> = series
        .iter()
        .zip(&descriptors)
        .map(|(s, d)| match d {
            Ok(d) => FitRow::fitted(s.id(), d),
            Err(e) => {
                log::warn!("station {}: {e}", s.id());
                let exc = extract_exceedances(&training_summer_t_max(s, split.train_end), evt.quantile).ok();
                FitRow::failed(s.id(), exc.as_ref().map(|x| x.threshold), exc.map(|x| x.values.len()))
            }
        })
        .collect();
    io::write_rows(&cfg.out_dir.join("evt_fit.csv"), &rows)?;
    Ok(rows)
}

pub fn prepare(cfg: &RunConfig, series: &[StationSeries]) -> Result<Prepared> {
    cfg.validate()?;
    let split = cfg.split(series)?;
    Ok(pipeline::prepare(series, &cfg.pipeline(split))?)
}

fn descriptors_if_di(prepared: &Prepared) -> Result<Option<Vec<GpdDescriptors>>> {
    Ok(match prepared.config.mode {
        FeatureMode::Di => Some(prepared.fitted_descriptors()?),
        FeatureMode::Baseline => None,
    })
}

/// Correlation, effective adjacency and station weights.
pub fn build_graph(cfg: &RunConfig) -> Result<Prepared> {
    let series = load_series(cfg)?;
    let prepared = prepare(cfg, &series)?;
    io::write_graph(&cfg.out_dir, &prepared.graph, descriptors_if_di(&prepared)?.as_deref())?;
    Ok(prepared)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub mode: FeatureMode,
    pub split: SplitSpec,
    pub first_date: Option<chrono::NaiveDate>,
    pub last_date: Option<chrono::NaiveDate>,
    pub station_ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub feature_units: Vec<String>,
    pub norm_mean: Vec<f64>,
    pub norm_sd: Vec<f64>,
    pub norm_scaled: Vec<bool>,
    pub t90: Vec<f64>,
    pub train_windows: usize,
    pub val_windows: usize,
    pub summer_positive_fraction: f64,
}

impl DatasetManifest {
    pub fn of(p: &Prepared) -> Self {
        Self {
            mode: p.config.mode,
            split: p.config.split,
            first_date: p.panel.dates.first().copied(),
            last_date: p.panel.dates.last().copied(),
            station_ids: p.panel.station_ids.clone(),
            feature_names: p.config.mode.feature_names().iter().map(|s| s.to_string()).collect(),
            feature_units: p.config.mode.feature_units().iter().map(|s| s.to_string()).collect(),
            norm_mean: p.norm.mean.clone(),
            norm_sd: p.norm.sd.clone(),
            norm_scaled: p.norm.scaled.clone(),
            t90: p.t90.clone(),
            train_windows: p.windows.train.len(),
            val_windows: p.windows.val.len(),
            summer_positive_fraction: p.panel.summer_positive_fraction(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: RunConfig,
    pub model_seed: u64,
    pub shuffle_seed: u64,
    pub split: SplitSpec,
    pub n_params: usize,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
    pub validation: MetricsReport,
    pub predictions: Predictions,
}

/// Trains on prepared data without touching the filesystem.
pub fn train_prepared(cfg: &RunConfig, prepared: &Prepared) -> Result<TrainOutcome> {
    let out = pipeline::run(prepared, cfg.model_config(), cfg.adam(), &cfg.schedule(), cfg.beta)?;
    let validation = if cfg.threshold == metrics::DEFAULT_THRESHOLD {
        out.validation
    } else {
        metrics::evaluate(&out.predictions.y, &out.predictions.p, cfg.threshold)?
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            trained: out.trained,
            pipeline: prepared.config.clone(),
        },
        report: out.report,
        validation,
        predictions: out.predictions,
    })
}

/// Trains one configuration and writes the checkpoint, per-epoch CSV,
/// validation metrics, labels and manifests.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let series = load_series(cfg)?;
    let prepared = prepare(cfg, &series)?;
    let out = train_prepared(cfg, &prepared)?;
    let dir = &cfg.out_dir;
    checkpoint::save(&dir.join(CHECKPOINT_FILE), &out.checkpoint)?;
    io::write_epochs(&dir.join(EPOCHS_FILE), &out.report.epochs)?;
    io::write_json(&dir.join("train_report.json"), &out.report)?;
    io::write_json(&dir.join(METRICS_FILE), &out.validation)?;
    io::write_json(&dir.join(DATASET_MANIFEST_FILE), &DatasetManifest::of(&prepared))?;
    io::write_labels(&dir.join("labels.csv"), &series, &prepared.labels)?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        model_seed: cfg.model_config().seed,
        shuffle_seed: cfg.schedule().seed,
        split: prepared.config.split,
        n_params: out.checkpoint.trained.model.n_params(),
        outputs: [
            CHECKPOINT_FILE,
            EPOCHS_FILE,
            "train_report.json",
            METRICS_FILE,
            DATASET_MANIFEST_FILE,
            "labels.csv",
        ]
        .map(String::from)
        .to_vec(),
    };
    io::write_json(&dir.join(RUN_MANIFEST_FILE), &manifest)?;
    Ok(out)
}

/// Which windows to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum EvalSplit {
    Train,
    #[default]
    Val,
}

/// Scores a trained model on the data, using the normalization and graph it
/// was trained with.
pub fn score(
    series: &[StationSeries],
    ckpt: &Checkpoint,
    mode: FeatureMode,
    split: EvalSplit,
) -> Result<(Prepared, Predictions)> {
    let TrainedModel { model, graph, .. } = &ckpt.trained;
    if mode != model.config.mode || ckpt.pipeline.mode != model.config.mode {
        return Err(Failure::data(format!(
            "checkpoint expects {} features per station-day ({} mode), config supplies {} ({} mode)",
            model.config.n_features(),
            model.config.mode.as_str(),
            mode.n_features(),
            mode.as_str()
        )));
    }
    let prepared = pipeline::prepare_for(series, &ckpt.pipeline, &ckpt.trained)?;
    let ctx = GraphContext::from_graph(graph, model.config.attention_bias)?;
    let anchors = match split {
        EvalSplit::Train => &prepared.windows.train,
        EvalSplit::Val => &prepared.windows.val,
    };
    if anchors.is_empty() {
        return Err(Failure::data("no windows to evaluate in the requested split"));
    }
    let pred = predict_windows(model, &prepared.panel, anchors, &ctx)?;
    Ok((prepared, pred))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub checkpoint: PathBuf,
    pub split: EvalSplit,
    pub threshold_sweep: bool,
    pub per_station: bool,
}

/// Sweep thresholds 0.05, 0.10, ..., 0.95.
pub fn sweep_thresholds() -> Vec<f64> {
    (1..20).map(|k| k as f64 / 20.0).collect()
}

#[derive(Debug, Serialize)]
struct SweepRow {
    threshold: f64,
    tp: u64,
    tn: u64,
    fp: u64,
    #[serde(rename = "fn")]
    fn_: u64,
    accuracy: f64,
    balanced_accuracy: f64,
    precision: f64,
    recall: f64,
    tnr: f64,
    f1: f64,
}

#[derive(Debug, Serialize)]
struct StationRow<'a> {
    station_id: &'a str,
    tp: u64,
    tn: u64,
    fp: u64,
    #[serde(rename = "fn")]
    fn_: u64,
    balanced_accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    auc_roc: Option<f64>,
}

/// Scores a checkpoint and writes the metrics report and ROC/PR curves.
pub fn evaluate(cfg: &RunConfig, opts: &EvalOptions) -> Result<MetricsReport> {
    cfg.validate()?;
    let ckpt = checkpoint::load(&opts.checkpoint)?;
    let series = load_series(cfg)?;
    let (prepared, pred) = score(&series, &ckpt, cfg.mode, opts.split)?;
    let report = metrics::evaluate(&pred.y, &pred.p, cfg.threshold)?;
    let dir = &cfg.out_dir;
    io::write_json(&dir.join(METRICS_FILE), &report)?;
    match metrics::roc_auc(&pred.y, &pred.p) {
        Ok((roc, _)) => io::write_curve(&dir.join("roc.csv"), &roc)?,
        Err(e) => log::warn!("no ROC curve: {e}"),
    }
    match metrics::pr_curve_ap(&pred.y, &pred.p) {
        Ok((pr, _)) => io::write_curve(&dir.join("pr.csv"), &pr)?,
        Err(e) => log::warn!("no precision-recall curve: {e}"),
    }
    if opts.threshold_sweep {
        let rows = metrics::threshold_sweep(&pred.y, &pred.p, &sweep_thresholds())?
            .into_iter()
            .map(|(t, c, m)| SweepRow {
                threshold: t,
                tp: c.tp,
                tn: c.tn,
                fp: c.fp,
                fn_: c.fn_,
                accuracy: m.accuracy,
                balanced_accuracy: m.balanced_accuracy,
                precision: m.precision,
                recall: m.recall,
                tnr: m.tnr,
                f1: m.f1,
            });
        io::write_rows(&dir.join("threshold_sweep.csv"), rows)?;
    }
    if opts.per_station {
        let n = prepared.panel.n_stations();
        let reports = metrics::per_station(&pred.y, &pred.p, n, cfg.threshold)?;
        let rows = prepared.panel.station_ids.iter().zip(&reports).map(|(id, r)| StationRow {
            station_id: id,
            tp: r.counts.tp,
            tn: r.counts.tn,
            fp: r.counts.fp,
            fn_: r.counts.fn_,
            balanced_accuracy: r.balanced_accuracy,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            auc_roc: r.auc_roc,
        });
        io::write_rows(&dir.join("per_station.csv"), rows)?;
    }
    Ok(report)
}

pub const COMPARED_METRICS: [&str; 8] = [
    "accuracy",
    "balanced_accuracy",
    "precision",
    "recall",
    "tnr",
    "f1",
    "auc_roc",
    "average_precision",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricDelta {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    /// `b − a`.
    pub delta: f64,
}

fn metric(report: &serde_json::Value, key: &str, path: &Path) -> Result<f64> {
    report
        .get(key)
        .and_then(serde_json::Value::as_f64)
        .ok_or_else(|| Failure::data(format!("{}: metric `{key}` is missing", path.display())))
}

/// Metric-by-metric differences between two metrics reports.
pub fn compare(a: &Path, b: &Path) -> Result<Vec<MetricDelta>> {
    let ra: serde_json::Value = io::read_json(a)?;
    let rb: serde_json::Value = io::read_json(b)?;
    COMPARED_METRICS
        .iter()
        .map(|&k| {
            let (x, y) = (metric(&ra, k, a)?, metric(&rb, k, b)?);
            Ok(MetricDelta {
                metric: k.into(),
                a: x,
                b: y,
                delta: y - x,
            })
        })
        .collect()
}

pub fn format_comparison(rows: &[MetricDelta], a: &str, b: &str) -> String {
    let mut out = format!("{:<18} {:>10} {:>10} {:>10}\n", "metric", a, b, "delta");
    for r in rows {
        out.push_str(&format!("{:<18} {:>10.4} {:>10.4} {:>+10.4}\n", r.metric, r.a, r.b, r.delta));
    }
    out
}
