use alloc::string::String;
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::dataset::DatasetError;
use crate::evt::EvtError;
use crate::graph::GraphError;
use crate::ingest::IngestError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::synth::SynthError;
use crate::training::TrainError;

/// Any failure from the core pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Evt(#[from] EvtError),
    #[error("station {station}: {source}")]
    StationEvt { station: String, source: EvtError },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}
