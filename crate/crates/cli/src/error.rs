use fairppm::eventlog::EventLogError;
use fairppm::metrics::MetricError;
use fairppm::train::TrainError;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact `{path}`: {reason}")]
    MissingArtifact { path: PathBuf, reason: String },
    #[error("metric `{metric}` is undefined: {reason}")]
    UndefinedMetric { metric: String, reason: String },
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact { .. } => 3,
            CliError::UndefinedMetric { .. } => 4,
            CliError::Internal(_) => 1,
        }
    }

    pub fn config(msg: impl Into<String>) -> CliError {
        CliError::Config(msg.into())
    }

    pub fn artifact(path: &Path, reason: impl ToString) -> CliError {
        CliError::MissingArtifact {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        }
    }

    pub fn internal(e: impl ToString) -> CliError {
        CliError::Internal(e.to_string())
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Undefined { metric, reason } => CliError::UndefinedMetric {
                metric: metric.to_string(),
                reason,
            },
            other => CliError::internal(other),
        }
    }
}

impl From<EventLogError> for CliError {
    fn from(e: EventLogError) -> Self {
        match e {
            EventLogError::Io(_) => CliError::internal(e),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Metric(m) => m.into(),
            TrainError::EventLog(l) => l.into(),
            TrainError::Encoding(_)
            | TrainError::Config(_)
            | TrainError::EmptyTrainingSet
            | TrainError::EmptyValidationSet => CliError::Config(e.to_string()),
            other => CliError::internal(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::internal(e)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
