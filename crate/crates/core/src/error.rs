//! Top-level error type for orchestration and the command-line tool, with
//! stable exit codes and a machine-readable rendering.

use serde::Serialize;
use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::config::ConfigError;
use crate::data::DataError;
use crate::metrics::MetricsError;
use crate::models::ModelError;
use crate::train::TrainError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{0}")]
    Usage(String),
}

impl From<ModelError> for Error {
    fn from(e: ModelError) -> Self {
        Error::Train(TrainError::Model(e))
    }
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    error: &'a str,
    message: String,
    exit_code: i32,
}

impl Error {
    /// Short category name used in the JSON report.
    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "data",
            4 => "divergence",
            _ => "internal",
        }
    }

    /// 2 configuration, 3 data, 4 numerical divergence, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) => 2,
            Error::Data(_) | Error::Checkpoint(_) | Error::Metrics(_) => 3,
            Error::Train(TrainError::DivergenceDetected { .. }) => 4,
            Error::Train(
                TrainError::SeriesTooShort { .. }
                | TrainError::InsufficientHistory { .. }
                | TrainError::EmptyEnsemble
                | TrainError::LengthMismatch { .. },
            ) => 3,
            Error::Train(TrainError::Model(ModelError::InvalidConfig(_))) => 2,
            Error::Train(_) => 1,
        }
    }

    pub fn to_json(&self) -> String {
        let report = Report { error: self.kind(), message: self.to_string(), exit_code: self.exit_code() };
        serde_json::to_string(&report).expect("error report serializes")
    }
}
