//! Experiment orchestration: runs the slice-then-offload loop over an
//! evaluation day, computes profit, utilization and deadline metrics, sweeps
//! parameters across seeds and renders reports.

pub mod config;
pub mod metrics;
pub mod report;
pub mod run;
pub mod sweep;
pub mod train;

pub use config::{ExperimentConfig, Method, SweepAxis};
pub use metrics::{compute_metrics, Metrics, MetricsLog, MetricsRow};
pub use run::{run_experiment, Components};
pub use sweep::{sweep, SweepRow};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] sliceoff_core::Error),
    #[error(transparent)]
    Learn(#[from] sliceoff_learn::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing component: {0}")]
    MissingComponent(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("plotting failed: {0}")]
    Plot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(_) => "core",
            Error::Learn(_) => "learn",
            Error::Config(_) | Error::Toml(_) => "config",
            Error::MissingComponent(_) => "missing_component",
            Error::Empty(_) => "empty_input",
            Error::Plot(_) => "plot",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
