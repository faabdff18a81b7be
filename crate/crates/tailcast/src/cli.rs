use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};

use tailcast_core::dataset::FeatureMode;
use tailcast_core::ingest::{AggregationConfig, ImputePolicy};
use tailcast_core::model::AttentionBias;

use crate::commands::{self, EvalOptions, EvalSplit, IngestOptions};
use crate::config::RunConfig;
use crate::error::Failure;

#[derive(Debug, Parser)]
#[command(name = "tailcast", version, about = "Heatwave forecasting on a station graph with GPD-informed attention")]
pub struct Cli {
    /// Flat TOML run config; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic station dataset.
    Synth(SynthArgs),
    /// Validate station CSVs, aggregate hourly input and fill short gaps.
    Ingest(IngestArgs),
    /// Fit per-station GPD tails on the training period.
    FitEvt(RunArgs),
    /// Build the correlation graph and station weights.
    BuildGraph(RunArgs),
    /// Train a model and write a checkpoint.
    Train(RunArgs),
    /// Score a checkpoint and export metrics and curves.
    Evaluate(EvaluateArgs),
    /// Side-by-side table of two metrics reports.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Baseline,
    Di,
}

impl From<ModeArg> for FeatureMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Baseline => FeatureMode::Baseline,
            ModeArg::Di => FeatureMode::Di,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BiasArg {
    LogBias,
    MaskOnly,
}

impl From<BiasArg> for AttentionBias {
    fn from(b: BiasArg) -> Self {
        match b {
            BiasArg::LogBias => AttentionBias::LogBias,
            BiasArg::MaskOnly => AttentionBias::MaskOnly,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Feature set; must agree with --mode.
    #[arg(long, value_enum)]
    pub features: Option<ModeArg>,
    #[arg(long)]
    pub c_in: Option<usize>,
    #[arg(long)]
    pub c_out: Option<usize>,
    #[arg(long)]
    pub train_end: Option<NaiveDate>,
    #[arg(long)]
    pub val_start: Option<NaiveDate>,
    #[arg(long)]
    pub val_years: Option<i32>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long, value_enum)]
    pub attention_bias: Option<BiasArg>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub evt_quantile: Option<f64>,
    #[arg(long)]
    pub sparsify: Option<f64>,
}

macro_rules! set {
    ($cfg:ident, $($field:ident <- $value:expr),* $(,)?) => {
        $(if let Some(v) = $value { $cfg.$field = v.into(); })*
    };
}

impl RunArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        set!(cfg,
            data_dir <- self.data.clone(),
            out_dir <- self.out.clone(),
            mode <- self.mode,
            c_in <- self.c_in,
            c_out <- self.c_out,
            val_years <- self.val_years,
            beta <- self.beta,
            hidden_dim <- self.hidden_dim,
            n_heads <- self.n_heads,
            n_layers <- self.n_layers,
            attention_bias <- self.attention_bias,
            learning_rate <- self.lr,
            batch_size <- self.batch_size,
            max_epochs <- self.max_epochs,
            patience <- self.patience,
            seed <- self.seed,
            threshold <- self.threshold,
            evt_quantile <- self.evt_quantile,
        );
        if let Some(f) = self.features {
            cfg.features = Some(f.into());
        }
        if self.train_end.is_some() {
            cfg.train_end = self.train_end;
        }
        if self.val_start.is_some() {
            cfg.val_start = self.val_start;
        }
        if self.sparsify.is_some() {
            cfg.sparsify_threshold = self.sparsify;
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub stations: Option<usize>,
    #[arg(long)]
    pub years: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub exceed_prob: Option<f64>,
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub start_year: Option<i32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    /// Directory with `stations.csv` and one CSV per station.
    #[arg(long)]
    pub input: PathBuf,
    /// Input files are hourly observations.
    #[arg(long)]
    pub hourly: bool,
    #[arg(long, default_value_t = 18)]
    pub min_temp_hours: usize,
    /// Longest gap filled by interpolation.
    #[arg(long, default_value_t = 3)]
    pub max_gap_days: usize,
    /// Remove incomplete days instead of interpolating.
    #[arg(long)]
    pub drop_days: bool,
    /// Fail on gaps too long to fill instead of dropping them.
    #[arg(long, conflicts_with = "drop_days")]
    pub forbid_drop: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = EvalSplit::Val)]
    pub split: EvalSplit,
    /// Also write metrics at thresholds 0.05 to 0.95.
    #[arg(long)]
    pub threshold_sweep: bool,
    #[arg(long)]
    pub per_station: bool,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    pub a: PathBuf,
    pub b: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = RunConfig::resolve(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => {
            set!(cfg,
                stations <- a.stations,
                years <- a.years,
                seed <- a.seed,
                exceed_prob <- a.exceed_prob,
                gpd_xi <- a.xi,
                gpd_sigma <- a.sigma,
                start_year <- a.start_year,
                out_dir <- a.out,
            );
            let series = commands::synth(&cfg)?;
            println!("wrote {} stations to {}", series.len(), cfg.out_dir.display());
        }
        Command::Ingest(a) => {
            set!(cfg, out_dir <- a.out.clone());
            let impute = if a.drop_days {
                ImputePolicy::DropDay
            } else {
                ImputePolicy::LinearInterpolate {
                    max_gap_days: a.max_gap_days,
                    forbid_drop: a.forbid_drop,
                }
            };
            let opts = IngestOptions {
                input: a.input,
                hourly: a.hourly,
                aggregation: AggregationConfig {
                    min_temp_hours: a.min_temp_hours,
                },
                impute,
            };
            let summary = commands::ingest(&cfg, &opts)?;
            println!("ingested {} stations into {}", summary.len(), cfg.out_dir.display());
        }
        Command::FitEvt(a) => {
            a.apply(&mut cfg);
            cfg.validate()?;
            let rows = commands::fit_evt(&cfg)?;
            let failed = rows.iter().filter(|r| !r.converged).count();
            println!("fitted {} stations ({failed} not converged)", rows.len());
        }
        Command::BuildGraph(a) => {
            a.apply(&mut cfg);
            let p = commands::build_graph(&cfg)?;
            println!("graph over {} stations written to {}", p.graph.n(), cfg.out_dir.display());
        }
        Command::Train(a) => {
            a.apply(&mut cfg);
            let out = commands::train(&cfg)?;
            let v = &out.validation;
            println!(
                "best epoch {} of {}: val BA {:.4} recall {:.4} precision {:.4} AUC {}",
                out.report.best_epoch,
                out.report.epochs.len(),
                v.balanced_accuracy,
                v.recall,
                v.precision,
                v.auc_roc.map_or("n/a".into(), |x| format!("{x:.4}"))
            );
        }
        Command::Evaluate(a) => {
            a.run.apply(&mut cfg);
            let opts = EvalOptions {
                checkpoint: a.checkpoint,
                split: a.split,
                threshold_sweep: a.threshold_sweep,
                per_station: a.per_station,
            };
            let r = commands::evaluate(&cfg, &opts)?;
            println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
        }
        Command::Compare(a) => {
            let rows = commands::compare(&a.a, &a.b)?;
            print!("{}", commands::format_comparison(&rows, "a", "b"));
        }
    }
    Ok(())
}
