//! Deterministic workload simulator.
//!
//! A [`SyntheticModel`] describes layers and their kernels. [`emit_run`]
//! plays the workload on a virtual clock and publishes spans through the
//! same tracer interface real profilers use, injecting a configurable
//! per-level profiling overhead. [`ground_truth`] computes what every
//! analysis should report for the same description without going through
//! spans at all.

mod emit;
pub mod fixtures;
mod model;
mod truth;

use thiserror::Error;

pub use emit::{emit_run, EmitConfig, OverheadProfile, LAUNCH_NAME};
pub use model::{BatchScaling, SyntheticKernel, SyntheticLayer, SyntheticModel};
pub use truth::{ground_truth, GroundTruth, TruthConfig};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),
    #[error(transparent)]
    Tracer(#[from] crate::tracer::TracerError),
    #[error(transparent)]
    Collector(#[from] crate::collector::CollectorError),
    #[error(transparent)]
    Analysis(#[from] crate::analysis::AnalysisError),
}
