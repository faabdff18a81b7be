//! Turns station series into a trainable problem and runs one configuration
//! end to end.
//!
//! Every statistic that could leak the future is fitted on the training period
//! only: the labeling threshold, the tail descriptors, the correlation graph
//! and the normalization.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::is_summer;
use crate::dataset::{
    compute_t90, label_pkl, make_windows, FeatureMode, NormStats, Panel, SplitSpec, WindowSplit, DEFAULT_MIN_RUN,
};
use crate::evt::{compute_descriptors, EvtConfig, EvtError, GpdDescriptors};
use crate::graph::{pearson_adjacency, station_weights, GraphError, GraphSpec, NegativeCorrelation};
use crate::ingest::{check_unique_ids, StationSeries};
use crate::metrics::{self, MetricsReport, DEFAULT_THRESHOLD};
use crate::model::{GatModel, GraphContext, ModelConfig, TrainedModel};
use crate::training::{self, AdamConfig, LossConfig, Predictions, Schedule, TrainReport};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: FeatureMode,
    pub c_in: usize,
    pub c_out: usize,
    pub split: SplitSpec,
    pub evt: EvtConfig,
    pub min_run: usize,
    pub sparsify_threshold: Option<f64>,
    pub negative: NegativeCorrelation,
}

impl PipelineConfig {
    pub fn new(mode: FeatureMode, c_in: usize, c_out: usize, split: SplitSpec) -> Self {
        Self {
            mode,
            c_in,
            c_out,
            split,
            evt: EvtConfig::default(),
            min_run: DEFAULT_MIN_RUN,
            sparsify_threshold: None,
            negative: NegativeCorrelation::Clamp,
        }
    }
}

/// `(date, t_max)` pairs with NaN for missing values.
pub fn t_max_pairs(series: &StationSeries) -> Vec<(NaiveDate, f64)> {
    series
        .records()
        .iter()
        .map(|r| (r.date, r.t_max.unwrap_or(f64::NAN)))
        .collect()
}

/// Summer `t_max` values on or before `train_end`.
pub fn training_summer_t_max(series: &StationSeries, train_end: NaiveDate) -> Vec<f64> {
    series
        .records()
        .iter()
        .filter(|r| r.date <= train_end && is_summer(r.date))
        .filter_map(|r| r.t_max)
        .collect()
}

/// Tail descriptors per station from training-period summer `t_max`.
pub fn station_descriptors(
    series: &[StationSeries],
    train_end: NaiveDate,
    evt: &EvtConfig,
) -> Vec<Result<GpdDescriptors, EvtError>> {
    series
        .iter()
        .map(|s| compute_descriptors(&training_summer_t_max(s, train_end), evt))
        .collect()
}

/// Labeling thresholds and labels per station.
pub fn station_labels(
    series: &[StationSeries],
    train_end: NaiveDate,
    min_run: usize,
) -> Result<(Vec<f64>, Vec<Vec<bool>>), Error> {
    let mut t90 = Vec::with_capacity(series.len());
    let mut labels = Vec::with_capacity(series.len());
    for s in series {
        let pairs = t_max_pairs(s);
        let train: Vec<(NaiveDate, f64)> = pairs.iter().copied().filter(|(d, _)| *d <= train_end).collect();
        let thr = compute_t90(s.id(), &train)?;
        labels.push(label_pkl(&pairs, thr, min_run));
        t90.push(thr);
    }
    Ok((t90, labels))
}

/// Pearson correlation of training summer `t_max` on the panel calendar.
pub fn correlation_matrix(series: &[StationSeries], panel: &Panel, train_end: NaiveDate) -> Result<Vec<f64>, Error> {
    let days: Vec<usize> = (0..panel.n_days())
        .filter(|&t| panel.dates[t] <= train_end && is_summer(panel.dates[t]))
        .collect();
    let columns: Vec<Vec<f64>> = series
        .iter()
        .map(|s| {
            let mut col = vec![f64::NAN; days.len()];
            for r in s.records() {
                if let (Some(t), Some(v)) = (panel.index_of(r.date), r.t_max) {
                    if let Ok(k) = days.binary_search(&t) {
                        col[k] = v;
                    }
                }
            }
            col
        })
        .collect();
    Ok(pearson_adjacency(&panel.station_ids, &columns)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub config: PipelineConfig,
    /// Normalized features.
    pub panel: Panel,
    pub labels: Vec<Vec<bool>>,
    pub t90: Vec<f64>,
    pub descriptors: Vec<Result<GpdDescriptors, EvtError>>,
    pub graph: GraphSpec,
    pub norm: NormStats,
    pub windows: WindowSplit,
}

impl Prepared {
    /// Descriptors for every station; fails on the first station whose fit
    /// failed.
    pub fn fitted_descriptors(&self) -> Result<Vec<GpdDescriptors>, Error> {
        self.descriptors
            .iter()
            .zip(&self.panel.station_ids)
            .map(|(d, id)| {
                d.clone().map_err(|source| Error::StationEvt {
                    station: id.clone(),
                    source,
                })
            })
            .collect()
    }

    /// Soft-F1 with tail-informed station weights in di mode, unweighted
    /// cross-entropy in baseline mode.
    pub fn default_loss(&self, beta: f64) -> LossConfig {
        match self.config.mode {
            FeatureMode::Di => LossConfig {
                beta,
                ..LossConfig::weighted_f1(self.graph.w.clone())
            },
            FeatureMode::Baseline => LossConfig::bce(self.panel.n_stations()),
        }
    }
}

pub fn prepare(series: &[StationSeries], config: &PipelineConfig) -> Result<Prepared, Error> {
    assemble(series, config, None)
}

/// Like [`prepare`], but reuses the normalization and graph of a trained
/// model instead of fitting new ones.
pub fn prepare_for(series: &[StationSeries], config: &PipelineConfig, trained: &TrainedModel) -> Result<Prepared, Error> {
    let ids: Vec<&str> = series.iter().map(StationSeries::id).collect();
    if ids != trained.graph.station_ids.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(GraphError::ShapeMismatch(format!(
            "data has stations {:?}, model was trained on {:?}",
            ids, trained.graph.station_ids
        ))
        .into());
    }
    assemble(series, config, Some((&trained.norm, &trained.graph)))
}

fn assemble(
    series: &[StationSeries],
    config: &PipelineConfig,
    fixed: Option<(&NormStats, &GraphSpec)>,
) -> Result<Prepared, Error> {
    check_unique_ids(series)?;
    let train_end = config.split.train_end;
    let (t90, labels) = station_labels(series, train_end, config.min_run)?;
    let descriptors = station_descriptors(series, train_end, &config.evt);
    let fitted: Option<Vec<GpdDescriptors>> = match config.mode {
        FeatureMode::Di => Some(
            descriptors
                .iter()
                .zip(series)
                .map(|(d, s)| {
                    d.clone().map_err(|source| Error::StationEvt {
                        station: s.id().into(),
                        source,
                    })
                })
                .collect::<Result<_, _>>()?,
        ),
        FeatureMode::Baseline => None,
    };

    let mut panel = Panel::build(series, &labels, fitted.as_deref(), config.mode)?;
    let (graph, norm) = match fixed {
        Some((norm, graph)) => (graph.clone(), norm.clone()),
        None => {
            let rho = correlation_matrix(series, &panel, train_end)?;
            let w = match &fitted {
                Some(d) => station_weights(d)?,
                None => vec![1.0; series.len()],
            };
            let graph = GraphSpec::new(panel.station_ids.clone(), rho, w, config.sparsify_threshold, config.negative)?;
            let train_days: Vec<usize> = (0..panel.n_days()).filter(|&t| panel.dates[t] <= train_end).collect();
            let norm = NormStats::fit(&panel, &config.mode.feature_names(), train_days)?;
            (graph, norm)
        }
    };
    panel.normalize(&norm)?;
    let windows = make_windows(&panel, config.c_in, config.c_out, &config.split)?;
    Ok(Prepared {
        config: config.clone(),
        panel,
        labels,
        t90,
        descriptors,
        graph,
        norm,
        windows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub trained: TrainedModel,
    pub report: TrainReport,
    pub validation: MetricsReport,
    pub predictions: Predictions,
}

/// Trains one configuration on prepared data and scores the validation set.
pub fn run(
    prepared: &Prepared,
    model_config: ModelConfig,
    adam: AdamConfig,
    schedule: &Schedule,
    beta: f64,
) -> Result<RunOutcome, Error> {
    let model = GatModel::init(model_config)?;
    let ctx = GraphContext::from_graph(&prepared.graph, model.config.attention_bias)?;
    let loss = prepared.default_loss(beta);
    let (model, report) = training::train(
        model,
        &prepared.panel,
        &prepared.windows.train,
        &prepared.windows.val,
        &ctx,
        &loss,
        adam,
        schedule,
    )?;
    let predictions = training::predict_windows(&model, &prepared.panel, &prepared.windows.val, &ctx)?;
    let validation = metrics::evaluate(&predictions.y, &predictions.p, DEFAULT_THRESHOLD)?;
    Ok(RunOutcome {
        trained: TrainedModel {
            model,
            norm: prepared.norm.clone(),
            graph: prepared.graph.clone(),
        },
        report,
        validation,
        predictions,
    })
}
