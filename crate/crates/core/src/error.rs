use std::path::PathBuf;

use thiserror::Error;

use crate::bulk::BulkError;
use crate::dynamics::DynamicsError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::scenario::ConfigError;
use crate::stability::StabilityError;
use crate::topology::TopologyError;

/// Any failure surfaced by the scenario runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error(transparent)]
    Bulk(#[from] BulkError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("json output: {0}")]
    Json(#[from] serde_json::Error),
    #[error("scenario '{scenario}': {source}")]
    InScenario {
        scenario: String,
        #[source]
        source: Box<Error>,
    },
}

/// Process exit code for a successful run.
pub const EXIT_OK: i32 = 0;
/// Output could not be written.
pub const EXIT_IO: i32 = 1;
/// The configuration is malformed or describes an invalid model.
pub const EXIT_CONFIG: i32 = 2;
/// A numerical procedure failed (divergence, Newton, eigensolver).
pub const EXIT_NUMERICAL: i32 = 3;

impl Error {
    pub fn in_scenario(self, scenario: &str) -> Self {
        match self {
            Error::InScenario { .. } => self,
            other => Error::InScenario {
                scenario: scenario.to_string(),
                source: Box::new(other),
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Model(_) | Error::Topology(_) => EXIT_CONFIG,
            Error::Dynamics(e) => match e {
                DynamicsError::Diverged { .. } => EXIT_NUMERICAL,
                _ => EXIT_CONFIG,
            },
            Error::Stability(e) => match e {
                StabilityError::DimensionMismatch { .. } | StabilityError::NotReduced => {
                    EXIT_CONFIG
                }
                _ => EXIT_NUMERICAL,
            },
            Error::Bulk(e) => match e {
                BulkError::EmptyTrajectory => EXIT_NUMERICAL,
                _ => EXIT_CONFIG,
            },
            Error::Metrics(e) => match e {
                // the configured run is too short for the requested window
                MetricsError::InsufficientSeriesLength { .. } | MetricsError::InvalidSpec { .. } => {
                    EXIT_CONFIG
                }
                _ => EXIT_NUMERICAL,
            },
            Error::Io { .. } | Error::Csv(_) | Error::Json(_) => EXIT_IO,
            Error::InScenario { source, .. } => source.exit_code(),
        }
    }
}
