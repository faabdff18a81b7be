use thiserror::Error;

use tailcast_core::dataset::DatasetError;
use tailcast_core::model::ModelError;
use tailcast_core::training::TrainError;

use crate::checkpoint::CheckpointError;
use crate::config::ConfigError;
use crate::io::FormatError;

/// A command failure, classified by exit code.
#[derive(Debug, Error)]
pub enum Failure {
    #[error("config error: {0:#}")]
    Config(anyhow::Error),
    #[error("data error: {0:#}")]
    Data(anyhow::Error),
    #[error("numeric failure: {0:#}")]
    Numeric(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 3,
            Self::Numeric(_) => 4,
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self::Data(anyhow::anyhow!(msg.into()))
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.into())
    }
}

impl From<FormatError> for Failure {
    fn from(e: FormatError) -> Self {
        Self::Data(e.into())
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        Self::Data(e.into())
    }
}

fn model_kind(e: &ModelError) -> u8 {
    match e {
        ModelError::InvalidConfig(_) => 2,
        ModelError::Autodiff(_) => 4,
        _ => 3,
    }
}

fn kind(e: &tailcast_core::Error) -> u8 {
    use tailcast_core::Error as E;
    match e {
        E::Synth(_) => 2,
        E::Dataset(DatasetError::InvalidSplit { .. } | DatasetError::InvalidWindow { .. }) => 2,
        E::Model(m) => model_kind(m),
        E::Train(t) => match t {
            TrainError::NonFiniteLoss { .. } | TrainError::NonFiniteGradient(_) | TrainError::Autodiff(_) => 4,
            TrainError::InvalidLoss(_) => 2,
            TrainError::Model(m) => model_kind(m),
            _ => 3,
        },
        E::Autodiff(_) => 4,
        _ => 3,
    }
}

impl From<tailcast_core::Error> for Failure {
    fn from(e: tailcast_core::Error) -> Self {
        match kind(&e) {
            2 => Self::Config(e.into()),
            4 => Self::Numeric(e.into()),
            _ => Self::Data(e.into()),
        }
    }
}

macro_rules! via_core {
    ($($t:ty),*) => {
        $(impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                tailcast_core::Error::from(e).into()
            }
        })*
    };
}

via_core!(
    tailcast_core::ingest::IngestError,
    tailcast_core::synth::SynthError,
    tailcast_core::evt::EvtError,
    DatasetError,
    tailcast_core::graph::GraphError,
    ModelError,
    TrainError,
    tailcast_core::metrics::MetricsError
);
