//! Run configuration: a flat TOML file, then `TAILCAST_OUT`, then flags.
//!
//! Every key is optional in the file; missing keys take the defaults below.
//!
//! ```toml
//! data_dir = "data"
//! out_dir = "out"
//! mode = "di"                  # di | baseline
//! c_in = 10
//! c_out = 3
//! val_years = 2                # used when train_end / val_start are absent
//! beta = 1.0
//! hidden_dim = 64
//! n_heads = 4
//! n_layers = 2
//! attention_bias = "log_bias"  # log_bias | mask_only
//! learning_rate = 0.001
//! batch_size = 64
//! max_epochs = 100
//! patience = 10
//! seed = 7
//! ```

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use tailcast_core::dataset::{FeatureMode, SplitSpec, DEFAULT_MIN_RUN};
use tailcast_core::evt::{EvtConfig, DEFAULT_QUANTILE, MIN_EXCEEDANCES};
use tailcast_core::graph::NegativeCorrelation;
use tailcast_core::ingest::StationSeries;
use tailcast_core::metrics::DEFAULT_THRESHOLD;
use tailcast_core::model::{AttentionBias, ModelConfig, LEAKY_SLOPE};
use tailcast_core::pipeline::PipelineConfig;
use tailcast_core::synth::SynthConfig;
use tailcast_core::training::{AdamConfig, Schedule};

pub const OUT_ENV: &str = "TAILCAST_OUT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub mode: FeatureMode,
    /// Feature set, when stated separately. Must agree with `mode`.
    pub features: Option<FeatureMode>,
    pub c_in: usize,
    pub c_out: usize,
    pub train_end: Option<NaiveDate>,
    pub val_start: Option<NaiveDate>,
    pub val_years: i32,
    pub beta: f64,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub n_heads: usize,
    pub attention_bias: AttentionBias,
    pub leaky_slope: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    pub threshold: f64,
    pub evt_quantile: f64,
    pub min_exceedances: usize,
    pub min_run: usize,
    pub sparsify_threshold: Option<f64>,
    pub negative_correlation: NegativeCorrelation,
    pub stations: usize,
    pub years: usize,
    pub start_year: i32,
    pub exceed_prob: f64,
    pub gpd_xi: f64,
    pub gpd_sigma: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let schedule = Schedule::default();
        let synth = SynthConfig::default();
        Self {
            data_dir: "data".into(),
            out_dir: "out".into(),
            mode: FeatureMode::Di,
            features: None,
            c_in: model.c_in,
            c_out: model.c_out,
            train_end: None,
            val_start: None,
            val_years: 2,
            beta: 1.0,
            n_layers: model.n_layers,
            hidden_dim: model.hidden_dim,
            n_heads: model.n_heads,
            attention_bias: model.attention_bias,
            leaky_slope: LEAKY_SLOPE,
            learning_rate: AdamConfig::default().learning_rate,
            batch_size: schedule.batch_size,
            max_epochs: schedule.max_epochs,
            patience: schedule.patience,
            min_delta: schedule.min_delta,
            seed: 7,
            threshold: DEFAULT_THRESHOLD,
            evt_quantile: DEFAULT_QUANTILE,
            min_exceedances: MIN_EXCEEDANCES,
            min_run: DEFAULT_MIN_RUN,
            sparsify_threshold: None,
            negative_correlation: NegativeCorrelation::Clamp,
            stations: synth.n_stations,
            years: synth.n_years,
            start_year: synth.start_year,
            exceed_prob: synth.exceed_prob,
            gpd_xi: synth.gpd_xi,
            gpd_sigma: synth.gpd_sigma,
        }
    }
}

/// Independent streams from one root seed.
fn split_seed(root: u64, stream: u64) -> u64 {
    let mut z = root ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.into(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.into(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    /// File (or defaults), then the environment override for the output
    /// directory. Flags are applied by the caller afterwards.
    pub fn resolve(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(out) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
            cfg.out_dir = out.into();
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(f) = self.features {
            if f != self.mode {
                return Err(invalid(
                    "features",
                    format!(
                        "mode `{}` conflicts with features `{}`",
                        self.mode.as_str(),
                        f.as_str()
                    ),
                ));
            }
        }
        if self.c_in == 0 {
            return Err(invalid("c_in", "must be at least 1"));
        }
        if self.c_out == 0 {
            return Err(invalid("c_out", "must be at least 1"));
        }
        if let (Some(a), Some(b)) = (self.train_end, self.val_start) {
            if a >= b {
                return Err(invalid("train_end", format!("{a} is not before val_start {b}")));
            }
        }
        if self.train_end.is_some() != self.val_start.is_some() {
            return Err(invalid("val_start", "train_end and val_start go together"));
        }
        if self.val_years < 1 {
            return Err(invalid("val_years", "must be at least 1"));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(invalid("beta", format!("{} must be positive", self.beta)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(invalid("learning_rate", format!("{} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(invalid("max_epochs", "must be at least 1"));
        }
        if !(self.min_delta.is_finite() && self.min_delta >= 0.0) {
            return Err(invalid("min_delta", "must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(invalid("threshold", format!("{} outside [0, 1]", self.threshold)));
        }
        if !(self.evt_quantile > 0.5 && self.evt_quantile < 1.0) {
            return Err(invalid("evt_quantile", format!("{} outside (0.5, 1)", self.evt_quantile)));
        }
        if self.min_run == 0 {
            return Err(invalid("min_run", "must be at least 1"));
        }
        if let Some(t) = self.sparsify_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(invalid("sparsify_threshold", format!("{t} outside [0, 1]")));
            }
        }
        self.model_config()
            .validate()
            .map_err(|e| invalid("hidden_dim", e.to_string()))?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            mode: self.mode,
            c_in: self.c_in,
            c_out: self.c_out,
            n_layers: self.n_layers,
            hidden_dim: self.hidden_dim,
            n_heads: self.n_heads,
            attention_bias: self.attention_bias,
            leaky_slope: self.leaky_slope,
            seed: split_seed(self.seed, 1),
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            min_delta: self.min_delta,
            seed: split_seed(self.seed, 2),
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    pub fn evt(&self) -> EvtConfig {
        EvtConfig {
            quantile: self.evt_quantile,
            min_exceedances: self.min_exceedances,
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_stations: self.stations,
            n_years: self.years,
            seed: self.seed,
            start_year: self.start_year,
            exceed_prob: self.exceed_prob,
            gpd_xi: self.gpd_xi,
            gpd_sigma: self.gpd_sigma,
            ..SynthConfig::default()
        }
    }

    /// Explicit split dates, or the last `val_years` calendar years of the
    /// data.
    pub fn split(&self, series: &[StationSeries]) -> Result<SplitSpec, ConfigError> {
        if let (Some(a), Some(b)) = (self.train_end, self.val_start) {
            return SplitSpec::new(a, b).map_err(|e| invalid("train_end", e.to_string()));
        }
        let last = series
            .iter()
            .filter_map(StationSeries::last_date)
            .max()
            .ok_or_else(|| invalid("data_dir", "dataset has no records"))?;
        SplitSpec::last_years(last, self.val_years).map_err(|e| invalid("val_years", e.to_string()))
    }

    pub fn pipeline(&self, split: SplitSpec) -> PipelineConfig {
        PipelineConfig {
            evt: self.evt(),
            min_run: self.min_run,
            sparsify_threshold: self.sparsify_threshold,
            negative: self.negative_correlation,
            ..PipelineConfig::new(self.mode, self.c_in, self.c_out, split)
        }
    }
}
