//! Learning components: a small reverse-mode autodiff engine, the attention
//! traffic forecaster, and twin-critic offloading agents with dual policy
//! distillation.

pub mod agent;
pub mod attention;
pub mod gradcheck;
pub mod graph;
pub mod mlp;
pub mod offload;
pub mod optim;
pub mod params;
pub mod predictor;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] sliceoff_core::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
