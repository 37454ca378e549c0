//! Configuration-driven experiment harness: flat key-value configs, seeded
//! multi-run execution over a worker pool, CSV/SVG artifacts, and a manifest
//! from which any experiment reproduces byte-identically.

pub mod config;
pub mod manifest;
pub mod output;
pub mod runner;

pub use config::{parse_config, ConfigError, ExperimentConfig, ProblemSpec};
pub use runner::{compare_projection, execute, CompareReport, ExecutionReport};

use thiserror::Error;

use crate::engine::EngineError;
use crate::metrics::MetricsError;
use crate::problems::BuildError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("instance construction failed: {0}")]
    Build(#[from] BuildError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("initial state override has length {got}, problem expects {expected}")]
    InitDimension { expected: usize, got: usize },
    #[error("compare-projection is only defined for the lagrangian problem")]
    CompareRequiresLagrangian,
    #[error("every run diverged or failed; nothing to aggregate")]
    AllRunsExcluded,
    #[error("worker pool: {0}")]
    ThreadPool(String),
    #[error("manifest: {0}")]
    ManifestFormat(String),
    #[error("serialization: {0}")]
    Serialize(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// CLI exit code class: 1 for configuration errors, 2 for runtime
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_)
            | HarnessError::InitDimension { .. }
            | HarnessError::CompareRequiresLagrangian => 1,
            _ => 2,
        }
    }
}
