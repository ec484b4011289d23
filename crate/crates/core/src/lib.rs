//! Across-stack profiling for model inference.
//!
//! Per-level profilers (model, layer, GPU kernel) publish [`span::Span`]s
//! through a [`tracer::Tracer`]. The [`collector`] merges the per-tracer
//! streams into one timeline, the [`correlate`] module rebuilds the
//! model → layer → kernel hierarchy with an interval tree, [`leveled`]
//! subtracts profiling overhead across runs captured at different profiling
//! levels, and [`analysis`] computes the fifteen standard analyses plus
//! roofline classification, stage attribution and optimal batch size.
//!
//! [`sim`] is a deterministic workload simulator driving the same tracer
//! interface with a virtual clock; it also computes the expected analysis
//! output directly from the workload description.

pub mod analysis;
pub mod cli;
pub mod clock;
pub mod collector;
pub mod correlate;
pub mod leveled;
pub mod report;
pub mod sim;
pub mod span;
pub mod tracer;

pub use span::{KernelMetrics, Level, LevelSet, RunMeta, Span, SpanKind, SystemSpec, TagValue, TraceBundle};
