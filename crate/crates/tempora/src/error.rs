use std::path::PathBuf;

use tempora_core::event::EventError;
use tempora_core::gateway::GatewayError;
use tempora_core::metrics::MetricError;
use tempora_core::stats::StatsError;
use tempora_core::temporal::TemporalError;

use crate::collect::CollectError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    Schema { path: PathBuf, line: usize, detail: String },
    #[error("{path}: duplicate id {id}")]
    DuplicateId { path: PathBuf, id: String },
    #[error("config: {0}")]
    Config(String),
    #[error("run {run_id}: {file} differs from the stored copy")]
    Conflict { run_id: String, file: String },
    #[error("missing artifact {0}")]
    MissingArtifact(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Collect(#[from] CollectError),
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit status: 1 usage, 2 data, 3 transport.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 1,
            Error::Gateway(GatewayError::Transport { .. }) => 3,
            Error::Collect(e) if e.is_transport() => 3,
            _ => 2,
        }
    }
}
