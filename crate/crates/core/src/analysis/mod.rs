//! The fifteen standard analyses, roofline classification, stage
//! attribution and optimal batch size.
//!
//! Correlated trees from any mix of runs are first reduced to an
//! [`Evaluation`]: per batch size, each quantity is read from the run whose
//! deepest profiling level matches it (model latency from `M` runs, layer
//! latency from `M/L` runs, kernel timing and metrics from runs with `G`),
//! and repetitions are reduced by trimmed mean. Every analysis is then a
//! pure function of the evaluation, the system spec and the config.

pub mod roofline;
pub mod stages;
pub mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::correlate::EntityTree;
use crate::span::{KernelMetrics, Level, LevelSet, SystemSpec};

pub use roofline::{
    arithmetic_intensity, arithmetic_throughput, classify, ideal_arithmetic_intensity, AggregateMetrics,
    RooflinePoint,
};
pub use stages::{dominant_stage, stage_sizes, Stage, StageAttribution};
pub use stats::{optimal_batch_size, trimmed_mean, trimmed_mean_ns, CurvePoint, OptimalBatch};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("empty sample")]
    EmptySample,
    #[error("trim fraction {0} outside [0, 0.5)")]
    InvalidTrim(f64),
    #[error("no runs to analyze")]
    NoRuns,
    #[error("{analysis} requires {level}-level profiling, missing for batch size {batch_size}")]
    MissingLevel { analysis: AnalysisKind, level: Level, batch_size: u32 },
    #[error("runs for batch size {batch_size} disagree: {message}")]
    InconsistentRuns { batch_size: u32, message: String },
    #[error("runs were captured on different systems ({0} and {1})")]
    MixedSystems(String, String),
    #[error("batch size {0} was not evaluated")]
    UnknownBatch(u32),
    #[error("unknown analysis `{0}`")]
    UnknownAnalysis(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AnalysisKind {
    A1,
    A2,
    A3,
    A4,
    A5,
    A6,
    A7,
    A8,
    A9,
    A10,
    A11,
    A12,
    A13,
    A14,
    A15,
    Stages,
    Roofline,
}

impl AnalysisKind {
    pub const ALL: [AnalysisKind; 17] = [
        AnalysisKind::A1,
        AnalysisKind::A2,
        AnalysisKind::A3,
        AnalysisKind::A4,
        AnalysisKind::A5,
        AnalysisKind::A6,
        AnalysisKind::A7,
        AnalysisKind::A8,
        AnalysisKind::A9,
        AnalysisKind::A10,
        AnalysisKind::A11,
        AnalysisKind::A12,
        AnalysisKind::A13,
        AnalysisKind::A14,
        AnalysisKind::A15,
        AnalysisKind::Stages,
        AnalysisKind::Roofline,
    ];

    pub fn name(self) -> &'static str {
        use AnalysisKind::*;
        match self {
            A1 => "a1",
            A2 => "a2",
            A3 => "a3",
            A4 => "a4",
            A5 => "a5",
            A6 => "a6",
            A7 => "a7",
            A8 => "a8",
            A9 => "a9",
            A10 => "a10",
            A11 => "a11",
            A12 => "a12",
            A13 => "a13",
            A14 => "a14",
            A15 => "a15",
            Stages => "stages",
            Roofline => "roofline",
        }
    }

    pub fn title(self) -> &'static str {
        use AnalysisKind::*;
        match self {
            A1 => "Model information",
            A2 => "Layer information",
            A3 => "Layer latency",
            A4 => "Layer allocated memory",
            A5 => "Layer type distribution",
            A6 => "Layer latency aggregated by type",
            A7 => "Layer allocated memory aggregated by type",
            A8 => "GPU kernel information",
            A9 => "GPU kernel roofline",
            A10 => "GPU kernels aggregated by name",
            A11 => "GPU kernels aggregated by layer",
            A12 => "GPU metrics per layer",
            A13 => "GPU vs non-GPU latency per layer",
            A14 => "Layer roofline",
            A15 => "Model aggregate across batch sizes",
            Stages => "Stage attribution",
            Roofline => "Model roofline across batch sizes",
        }
    }

    /// Profiling levels the analysis reads from.
    pub fn required_levels(self) -> LevelSet {
        use AnalysisKind::*;
        use Level::*;
        match self {
            A1 => LevelSet::new([Model]),
            A2 | A3 | A4 | A5 | A6 | A7 | Stages => LevelSet::new([Layer]),
            A8 | A9 | A10 => LevelSet::new([Kernel]),
            A11 | A12 | A13 | A14 => LevelSet::new([Layer, Kernel]),
            A15 | Roofline => LevelSet::new([Model, Kernel]),
        }
    }
}

impl fmt::Display for AnalysisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnalysisKind {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        AnalysisKind::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or_else(|| AnalysisError::UnknownAnalysis(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub trim_fraction: f64,
    pub epsilon: f64,
    /// Negative non-GPU latency beyond this fraction of the layer latency
    /// is flagged.
    pub non_gpu_tolerance: f64,
    /// Restrict per-run analyses to one batch size.
    pub batch_size: Option<u32>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig { trim_fraction: 0.2, epsilon: 0.05, non_gpu_tolerance: 0.01, batch_size: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSummary {
    pub layer_index: usize,
    pub name: String,
    pub layer_type: String,
    pub shape: Option<String>,
    pub latency_ns: f64,
    pub alloc_bytes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelSummary {
    pub name: String,
    pub layer_index: usize,
    /// Position among the kernels of its layer.
    pub ordinal: usize,
    pub latency_ns: f64,
    pub metrics: KernelMetrics,
}

/// Reduced view of all runs at one batch size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchEvaluation {
    pub batch_size: u32,
    /// Union of the profiling levels of the runs.
    pub available: LevelSet,
    pub model_latency_ns: f64,
    pub layers: Option<Vec<LayerSummary>>,
    /// Kernels in execution order: by layer, then by launch.
    pub kernels: Option<Vec<KernelSummary>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub system: SystemSpec,
    pub batches: BTreeMap<u32, BatchEvaluation>,
}

/// The smallest run set whose deepest level is `level`, else the smallest
/// containing it.
fn pick_source<'a, T>(groups: &'a BTreeMap<LevelSet, T>, level: Level) -> Option<(&'a LevelSet, &'a T)> {
    let by_size = |a: &(&LevelSet, &T), b: &(&LevelSet, &T)| a.0.len().cmp(&b.0.len()).then(a.0.cmp(b.0));
    groups
        .iter()
        .filter(|(s, _)| s.deepest() == Some(level))
        .min_by(by_size)
        .or_else(|| groups.iter().filter(|(s, _)| s.contains(level)).min_by(by_size))
}

fn inconsistent(batch_size: u32, message: impl Into<String>) -> AnalysisError {
    AnalysisError::InconsistentRuns { batch_size, message: message.into() }
}

fn reduce_layers(batch: u32, runs: &[&EntityTree], trim: f64) -> Result<Vec<LayerSummary>, AnalysisError> {
    let first = runs[0].layers();
    if runs.iter().any(|t| t.layers().len() != first.len()) {
        return Err(inconsistent(batch, "layer counts differ between repetitions"));
    }
    first
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let lat: Vec<u64> = runs.iter().map(|t| t.layers()[i].latency_ns()).collect();
            let alloc: Vec<f64> = runs.iter().map(|t| t.layers()[i].alloc_bytes).collect();
            Ok(LayerSummary {
                layer_index: i,
                name: l.name().to_owned(),
                layer_type: l.layer_type.clone(),
                shape: l.shape.clone(),
                latency_ns: trimmed_mean_ns(&lat, trim)?,
                alloc_bytes: trimmed_mean(&alloc, trim)?,
            })
        })
        .collect()
}

fn reduce_kernels(batch: u32, runs: &[&EntityTree], trim: f64) -> Result<Vec<KernelSummary>, AnalysisError> {
    let first = runs[0].layers();
    let same_shape = runs.iter().all(|t| {
        t.layers().len() == first.len()
            && t.layers().iter().zip(first).all(|(a, b)| a.kernels.len() == b.kernels.len())
    });
    if !same_shape {
        return Err(inconsistent(batch, "kernel counts differ between repetitions"));
    }
    let mut out = Vec::new();
    for (li, layer) in first.iter().enumerate() {
        for (ki, k) in layer.kernels.iter().enumerate() {
            let pick = |f: fn(&crate::correlate::KernelExec) -> f64| -> Result<f64, AnalysisError> {
                let v: Vec<f64> = runs.iter().map(|t| f(&t.layers()[li].kernels[ki])).collect();
                trimmed_mean(&v, trim)
            };
            out.push(KernelSummary {
                name: k.name().to_owned(),
                layer_index: li,
                ordinal: ki,
                latency_ns: pick(|k| k.latency_ns() as f64)?,
                metrics: KernelMetrics {
                    flop_count_sp: pick(|k| k.metrics.flop_count_sp)?,
                    dram_read_bytes: pick(|k| k.metrics.dram_read_bytes)?,
                    dram_write_bytes: pick(|k| k.metrics.dram_write_bytes)?,
                    achieved_occupancy: pick(|k| k.metrics.achieved_occupancy)?,
                },
            });
        }
    }
    Ok(out)
}

impl Evaluation {
    /// Reduces correlated runs. All runs must share one system.
    pub fn from_trees<'a>(
        trees: impl IntoIterator<Item = &'a EntityTree>,
        trim: f64,
    ) -> Result<Evaluation, AnalysisError> {
        if !(0.0..0.5).contains(&trim) {
            return Err(AnalysisError::InvalidTrim(trim));
        }
        let mut grouped: BTreeMap<u32, BTreeMap<LevelSet, Vec<&EntityTree>>> = BTreeMap::new();
        let mut system: Option<&SystemSpec> = None;
        for t in trees {
            match system {
                Some(s) if *s != t.meta.system => {
                    return Err(AnalysisError::MixedSystems(s.name.clone(), t.meta.system.name.clone()))
                }
                _ => system = Some(&t.meta.system),
            }
            grouped
                .entry(t.meta.batch_size)
                .or_default()
                .entry(t.meta.profiling_levels.clone())
                .or_default()
                .push(t);
        }
        let system = system.ok_or(AnalysisError::NoRuns)?.clone();
        let mut batches = BTreeMap::new();
        for (batch_size, groups) in grouped {
            let available: LevelSet = groups.keys().flat_map(|s| s.iter()).collect();
            let (_, model_runs) = pick_source(&groups, Level::Model).ok_or(AnalysisError::NoRuns)?;
            let lat: Vec<u64> = model_runs.iter().map(|t| t.model_latency_ns()).collect();
            let model_latency_ns = trimmed_mean_ns(&lat, trim)?;
            let layers = match pick_source(&groups, Level::Layer) {
                Some((_, runs)) => Some(reduce_layers(batch_size, runs, trim)?),
                None => None,
            };
            let kernels = match pick_source(&groups, Level::Kernel) {
                Some((_, runs)) => {
                    if let Some(layers) = &layers {
                        if runs[0].layers().len() != layers.len() {
                            return Err(inconsistent(
                                batch_size,
                                "layer count of kernel-level runs differs from layer-level runs",
                            ));
                        }
                    }
                    Some(reduce_kernels(batch_size, runs, trim)?)
                }
                None => None,
            };
            batches.insert(batch_size, BatchEvaluation { batch_size, available, model_latency_ns, layers, kernels });
        }
        Ok(Evaluation { system, batches })
    }

    pub fn with_system(mut self, system: SystemSpec) -> Self {
        self.system = system;
        self
    }

    /// Throughput curve over all evaluated batch sizes.
    pub fn curve(&self) -> Vec<CurvePoint> {
        self.batches.values().map(|b| CurvePoint::new(b.batch_size, b.model_latency_ns)).collect()
    }

    fn selected(&self, config: &AnalysisConfig) -> Result<Vec<&BatchEvaluation>, AnalysisError> {
        match config.batch_size {
            Some(b) => self.batches.get(&b).map(|e| vec![e]).ok_or(AnalysisError::UnknownBatch(b)),
            None => Ok(self.batches.values().collect()),
        }
    }

    /// Fails when a selected batch lacks a level the analysis needs.
    pub fn check_levels(&self, kind: AnalysisKind, config: &AnalysisConfig) -> Result<(), AnalysisError> {
        for b in self.selected(config)? {
            for level in kind.required_levels().iter() {
                if !b.available.contains(level) {
                    return Err(AnalysisError::MissingLevel { analysis: kind, level, batch_size: b.batch_size });
                }
            }
        }
        Ok(())
    }

    pub fn run(&self, kind: AnalysisKind, config: &AnalysisConfig) -> Result<AnalysisOutput, AnalysisError> {
        self.check_levels(kind, config)?;
        let batches = self.selected(config)?;
        let spec = &self.system;
        let layers = |b: &&BatchEvaluation| b.layers.as_deref().unwrap_or_default().to_vec();
        let kernels = |b: &&BatchEvaluation| b.kernels.as_deref().unwrap_or_default().to_vec();
        use AnalysisKind::*;
        Ok(match kind {
            A1 => AnalysisOutput::ModelInfo(model_info(&self.curve(), config.epsilon)?),
            A2 => AnalysisOutput::Layers(batches.iter().flat_map(|b| layer_table(b.batch_size, &layers(b))).collect()),
            A3 => AnalysisOutput::LayerLatency(
                batches.iter().flat_map(|b| layer_latency_series(b.batch_size, &layers(b))).collect(),
            ),
            A4 => AnalysisOutput::LayerAlloc(
                batches.iter().flat_map(|b| layer_alloc_series(b.batch_size, &layers(b))).collect(),
            ),
            A5 | A6 | A7 => {
                let mut rows: Vec<LayerTypeRow> = Vec::new();
                for b in &batches {
                    let mut part = by_type(b.batch_size, &layers(b));
                    sort_type_rows(&mut part, kind);
                    rows.extend(part);
                }
                AnalysisOutput::LayerTypes(rows)
            }
            A8 => AnalysisOutput::Kernels(batches.iter().flat_map(|b| kernel_table(b.batch_size, &kernels(b), spec)).collect()),
            A9 => AnalysisOutput::KernelRoofline(
                batches.iter().flat_map(|b| kernel_roofline(b.batch_size, &kernels(b), spec)).collect(),
            ),
            A10 => AnalysisOutput::KernelsByName(
                batches
                    .iter()
                    .flat_map(|b| kernels_by_name(b.batch_size, &kernels(b), b.model_latency_ns, spec))
                    .collect(),
            ),
            A11 => AnalysisOutput::KernelsByLayer(
                batches.iter().flat_map(|b| kernels_by_layer(b.batch_size, &layers(b), &kernels(b), spec)).collect(),
            ),
            A12 => AnalysisOutput::LayerMetrics(
                batches.iter().flat_map(|b| layer_metrics(b.batch_size, layers(b).len(), &kernels(b))).collect(),
            ),
            A13 => {
                let mut rows = Vec::new();
                let mut models = Vec::new();
                for b in &batches {
                    rows.extend(gpu_split(b.batch_size, &layers(b), &kernels(b), config.non_gpu_tolerance));
                    models.push(model_gpu_share(b.batch_size, b.model_latency_ns, &kernels(b)));
                }
                AnalysisOutput::GpuSplit(GpuSplit { layers: rows, models })
            }
            A14 => AnalysisOutput::LayerRoofline(
                batches.iter().flat_map(|b| layer_roofline(b.batch_size, &layers(b), &kernels(b), spec)).collect(),
            ),
            A15 => AnalysisOutput::ModelAggregate(
                self.batches.values().map(|b| model_aggregate(b.batch_size, b.model_latency_ns, &kernels(&b), spec)).collect(),
            ),
            Stages => AnalysisOutput::Stages(
                batches.iter().map(|b| stage_attribution(b.batch_size, &layers(b), b.kernels.as_deref())).collect(),
            ),
            Roofline => AnalysisOutput::ModelRoofline(ModelRoofline {
                ideal_arithmetic_intensity: ideal_arithmetic_intensity(spec),
                peak_flops: spec.peak_flops,
                points: self
                    .batches
                    .values()
                    .map(|b| model_roofline_row(&model_aggregate(b.batch_size, b.model_latency_ns, &kernels(&b), spec)))
                    .collect(),
            }),
        })
    }
}

/// Typed result of one analysis.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum AnalysisOutput {
    ModelInfo(ModelInfo),
    Layers(Vec<LayerInfoRow>),
    LayerLatency(Vec<LayerLatencyPoint>),
    LayerAlloc(Vec<LayerAllocPoint>),
    LayerTypes(Vec<LayerTypeRow>),
    Kernels(Vec<KernelInfoRow>),
    KernelRoofline(Vec<KernelRooflineRow>),
    KernelsByName(Vec<KernelByNameRow>),
    KernelsByLayer(Vec<KernelByLayerRow>),
    LayerMetrics(Vec<LayerMetricsRow>),
    GpuSplit(GpuSplit),
    LayerRoofline(Vec<LayerRooflineRow>),
    ModelAggregate(Vec<ModelAggregateRow>),
    Stages(Vec<StageAttribution>),
    ModelRoofline(ModelRoofline),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelInfoRow {
    pub batch_size: u32,
    pub latency_ns: f64,
    /// Inputs per second.
    pub throughput: f64,
    pub online: bool,
    pub max_throughput: bool,
    pub optimal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelInfo {
    pub rows: Vec<ModelInfoRow>,
    /// Latency at the smallest evaluated batch size.
    pub online_latency_ns: f64,
    pub max_throughput: f64,
    pub max_throughput_batch_size: u32,
    pub optimal_batch_size: u32,
    pub warning: Option<String>,
}

pub fn model_info(curve: &[CurvePoint], epsilon: f64) -> Result<ModelInfo, AnalysisError> {
    let mut pts = curve.to_vec();
    pts.sort_by_key(|p| p.batch_size);
    let first = *pts.first().ok_or(AnalysisError::EmptySample)?;
    let mut best = first;
    for p in &pts {
        if p.throughput > best.throughput {
            best = *p;
        }
    }
    let opt = optimal_batch_size(&pts, epsilon)?;
    let rows = pts
        .iter()
        .map(|p| ModelInfoRow {
            batch_size: p.batch_size,
            latency_ns: p.latency_ns,
            throughput: p.throughput,
            online: p.batch_size == first.batch_size,
            max_throughput: p.batch_size == best.batch_size,
            optimal: p.batch_size == opt.batch_size,
        })
        .collect();
    Ok(ModelInfo {
        rows,
        online_latency_ns: first.latency_ns,
        max_throughput: best.throughput,
        max_throughput_batch_size: best.batch_size,
        optimal_batch_size: opt.batch_size,
        warning: opt.warning,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerInfoRow {
    pub batch_size: u32,
    pub layer_index: usize,
    pub name: String,
    pub layer_type: String,
    pub shape: Option<String>,
    pub latency_ns: f64,
    pub alloc_bytes: f64,
}

pub fn layer_table(batch_size: u32, layers: &[LayerSummary]) -> Vec<LayerInfoRow> {
    layers
        .iter()
        .map(|l| LayerInfoRow {
            batch_size,
            layer_index: l.layer_index,
            name: l.name.clone(),
            layer_type: l.layer_type.clone(),
            shape: l.shape.clone(),
            latency_ns: l.latency_ns,
            alloc_bytes: l.alloc_bytes,
        })
        .collect()
}

/// Rows ordered by descending latency, ties by layer index.
pub fn sort_by_latency(rows: &mut [LayerInfoRow]) {
    rows.sort_by(|a, b| b.latency_ns.total_cmp(&a.latency_ns).then(a.layer_index.cmp(&b.layer_index)));
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerLatencyPoint {
    pub batch_size: u32,
    pub layer_index: usize,
    pub latency_ns: f64,
}

pub fn layer_latency_series(batch_size: u32, layers: &[LayerSummary]) -> Vec<LayerLatencyPoint> {
    layers.iter().map(|l| LayerLatencyPoint { batch_size, layer_index: l.layer_index, latency_ns: l.latency_ns }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerAllocPoint {
    pub batch_size: u32,
    pub layer_index: usize,
    pub alloc_bytes: f64,
}

pub fn layer_alloc_series(batch_size: u32, layers: &[LayerSummary]) -> Vec<LayerAllocPoint> {
    layers.iter().map(|l| LayerAllocPoint { batch_size, layer_index: l.layer_index, alloc_bytes: l.alloc_bytes }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerTypeRow {
    pub batch_size: u32,
    pub layer_type: String,
    pub count: usize,
    pub total_latency_ns: f64,
    pub total_alloc_bytes: f64,
}

/// Per-type totals, in type-name order.
pub fn by_type(batch_size: u32, layers: &[LayerSummary]) -> Vec<LayerTypeRow> {
    let mut map: BTreeMap<&str, LayerTypeRow> = BTreeMap::new();
    for l in layers {
        let row = map.entry(&l.layer_type).or_insert_with(|| LayerTypeRow {
            batch_size,
            layer_type: l.layer_type.clone(),
            count: 0,
            total_latency_ns: 0.0,
            total_alloc_bytes: 0.0,
        });
        row.count += 1;
        row.total_latency_ns += l.latency_ns;
        row.total_alloc_bytes += l.alloc_bytes;
    }
    map.into_values().collect()
}

/// a5 by count, a6 by latency, a7 by allocation; descending, ties by name.
pub fn sort_type_rows(rows: &mut [LayerTypeRow], kind: AnalysisKind) {
    rows.sort_by(|a, b| {
        let primary = match kind {
            AnalysisKind::A5 => b.count.cmp(&a.count),
            AnalysisKind::A7 => b.total_alloc_bytes.total_cmp(&a.total_alloc_bytes),
            _ => b.total_latency_ns.total_cmp(&a.total_latency_ns),
        };
        primary.then_with(|| a.layer_type.cmp(&b.layer_type))
    });
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelInfoRow {
    pub batch_size: u32,
    /// Position in execution order across the whole run.
    pub kernel_index: usize,
    pub name: String,
    pub layer_index: usize,
    pub latency_ns: f64,
    pub flops: f64,
    pub dram_read_bytes: f64,
    pub dram_write_bytes: f64,
    pub achieved_occupancy: f64,
    pub arithmetic_intensity: Option<f64>,
    pub arithmetic_throughput: Option<f64>,
    pub memory_bound: Option<bool>,
}

pub fn kernel_table(batch_size: u32, kernels: &[KernelSummary], spec: &SystemSpec) -> Vec<KernelInfoRow> {
    let ideal = ideal_arithmetic_intensity(spec);
    kernels
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let m = &k.metrics;
            let ai = arithmetic_intensity(m.flop_count_sp, m.dram_read_bytes, m.dram_write_bytes);
            KernelInfoRow {
                batch_size,
                kernel_index: i,
                name: k.name.clone(),
                layer_index: k.layer_index,
                latency_ns: k.latency_ns,
                flops: m.flop_count_sp,
                dram_read_bytes: m.dram_read_bytes,
                dram_write_bytes: m.dram_write_bytes,
                achieved_occupancy: m.achieved_occupancy,
                arithmetic_intensity: ai,
                arithmetic_throughput: arithmetic_throughput(m.flop_count_sp, k.latency_ns),
                memory_bound: ai.map(|ai| ai < ideal),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelRooflineRow {
    pub batch_size: u32,
    pub kernel_index: usize,
    pub name: String,
    pub layer_index: usize,
    pub arithmetic_intensity: Option<f64>,
    pub arithmetic_throughput: Option<f64>,
    pub memory_bound: Option<bool>,
    /// Undefined intensity: left off the roofline.
    pub excluded: bool,
}

pub fn kernel_roofline(batch_size: u32, kernels: &[KernelSummary], spec: &SystemSpec) -> Vec<KernelRooflineRow> {
    kernel_table(batch_size, kernels, spec)
        .into_iter()
        .map(|r| KernelRooflineRow {
            batch_size,
            kernel_index: r.kernel_index,
            name: r.name,
            layer_index: r.layer_index,
            excluded: r.arithmetic_intensity.is_none(),
            arithmetic_intensity: r.arithmetic_intensity,
            arithmetic_throughput: r.arithmetic_throughput,
            memory_bound: r.memory_bound,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelByNameRow {
    pub batch_size: u32,
    pub name: String,
    pub count: usize,
    pub total_latency_ns: f64,
    /// Share of the model prediction latency, in percent.
    pub latency_percentage: f64,
    pub total_flops: f64,
    pub total_dram_read_bytes: f64,
    pub total_dram_write_bytes: f64,
    pub achieved_occupancy: Option<f64>,
    pub arithmetic_intensity: Option<f64>,
    pub arithmetic_throughput: Option<f64>,
    pub memory_bound: Option<bool>,
}

/// Latency percentage of `part` within the model prediction latency.
pub fn latency_percentage(part_ns: f64, model_latency_ns: f64) -> f64 {
    if model_latency_ns > 0.0 {
        part_ns / model_latency_ns * 100.0
    } else {
        0.0
    }
}

/// Per-name aggregates, by descending total latency, ties by name.
pub fn kernels_by_name(
    batch_size: u32,
    kernels: &[KernelSummary],
    model_latency_ns: f64,
    spec: &SystemSpec,
) -> Vec<KernelByNameRow> {
    let mut groups: BTreeMap<&str, AggregateMetrics> = BTreeMap::new();
    for k in kernels {
        groups.entry(&k.name).or_default().add(k.latency_ns, &k.metrics);
    }
    let mut rows: Vec<KernelByNameRow> = groups
        .into_iter()
        .map(|(name, agg)| KernelByNameRow {
            batch_size,
            name: name.to_owned(),
            count: agg.count,
            total_latency_ns: agg.total_latency_ns,
            latency_percentage: latency_percentage(agg.total_latency_ns, model_latency_ns),
            total_flops: agg.total_flops,
            total_dram_read_bytes: agg.total_dram_read_bytes,
            total_dram_write_bytes: agg.total_dram_write_bytes,
            achieved_occupancy: agg.weighted_achieved_occupancy(),
            arithmetic_intensity: agg.arithmetic_intensity(),
            arithmetic_throughput: agg.arithmetic_throughput(),
            memory_bound: agg.memory_bound(spec),
        })
        .collect();
    rows.sort_by(|a, b| b.total_latency_ns.total_cmp(&a.total_latency_ns).then_with(|| a.name.cmp(&b.name)));
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelByLayerRow {
    pub batch_size: u32,
    pub layer_index: usize,
    pub name: String,
    pub layer_type: String,
    pub layer_latency_ns: f64,
    pub kernel_count: usize,
    pub kernel_latency_ns: f64,
    pub total_flops: f64,
    pub total_dram_read_bytes: f64,
    pub total_dram_write_bytes: f64,
    pub achieved_occupancy: Option<f64>,
    pub arithmetic_intensity: Option<f64>,
    pub arithmetic_throughput: Option<f64>,
    pub memory_bound: Option<bool>,
}

fn per_layer(layer_count: usize, kernels: &[KernelSummary]) -> Vec<AggregateMetrics> {
    let mut out = vec![AggregateMetrics::default(); layer_count];
    for k in kernels {
        if let Some(agg) = out.get_mut(k.layer_index) {
            agg.add(k.latency_ns, &k.metrics);
        }
    }
    out
}

pub fn kernels_by_layer(
    batch_size: u32,
    layers: &[LayerSummary],
    kernels: &[KernelSummary],
    spec: &SystemSpec,
) -> Vec<KernelByLayerRow> {
    layers
        .iter()
        .zip(per_layer(layers.len(), kernels))
        .map(|(l, agg)| KernelByLayerRow {
            batch_size,
            layer_index: l.layer_index,
            name: l.name.clone(),
            layer_type: l.layer_type.clone(),
            layer_latency_ns: l.latency_ns,
            kernel_count: agg.count,
            kernel_latency_ns: agg.total_latency_ns,
            total_flops: agg.total_flops,
            total_dram_read_bytes: agg.total_dram_read_bytes,
            total_dram_write_bytes: agg.total_dram_write_bytes,
            achieved_occupancy: agg.weighted_achieved_occupancy(),
            arithmetic_intensity: agg.arithmetic_intensity(),
            arithmetic_throughput: agg.arithmetic_throughput(),
            memory_bound: agg.memory_bound(spec),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerMetricsRow {
    pub batch_size: u32,
    pub layer_index: usize,
    pub flops: f64,
    pub dram_read_bytes: f64,
    pub dram_write_bytes: f64,
}

pub fn layer_metrics(batch_size: u32, layer_count: usize, kernels: &[KernelSummary]) -> Vec<LayerMetricsRow> {
    per_layer(layer_count, kernels)
        .into_iter()
        .enumerate()
        .map(|(i, agg)| LayerMetricsRow {
            batch_size,
            layer_index: i,
            flops: agg.total_flops,
            dram_read_bytes: agg.total_dram_read_bytes,
            dram_write_bytes: agg.total_dram_write_bytes,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GpuSplitRow {
    pub batch_size: u32,
    pub layer_index: usize,
    pub name: String,
    pub layer_latency_ns: f64,
    pub gpu_latency_ns: f64,
    pub non_gpu_latency_ns: f64,
    pub gpu_share: Option<f64>,
    pub non_gpu_share: Option<f64>,
    /// Kernels outlast the layer by more than the noise tolerance.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelGpuShare {
    pub batch_size: u32,
    pub model_latency_ns: f64,
    pub gpu_latency_ns: f64,
    pub gpu_latency_percentage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GpuSplit {
    pub layers: Vec<GpuSplitRow>,
    pub models: Vec<ModelGpuShare>,
}

pub fn gpu_split(
    batch_size: u32,
    layers: &[LayerSummary],
    kernels: &[KernelSummary],
    tolerance: f64,
) -> Vec<GpuSplitRow> {
    layers
        .iter()
        .zip(per_layer(layers.len(), kernels))
        .map(|(l, agg)| {
            let gpu = agg.total_latency_ns;
            let non_gpu = l.latency_ns - gpu;
            let positive = l.latency_ns > 0.0;
            GpuSplitRow {
                batch_size,
                layer_index: l.layer_index,
                name: l.name.clone(),
                layer_latency_ns: l.latency_ns,
                gpu_latency_ns: gpu,
                non_gpu_latency_ns: non_gpu,
                gpu_share: positive.then(|| gpu / l.latency_ns),
                non_gpu_share: positive.then(|| non_gpu / l.latency_ns),
                flagged: non_gpu < -tolerance * l.latency_ns,
            }
        })
        .collect()
}

pub fn model_gpu_share(batch_size: u32, model_latency_ns: f64, kernels: &[KernelSummary]) -> ModelGpuShare {
    let gpu: f64 = kernels.iter().map(|k| k.latency_ns).sum();
    ModelGpuShare {
        batch_size,
        model_latency_ns,
        gpu_latency_ns: gpu,
        gpu_latency_percentage: latency_percentage(gpu, model_latency_ns),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerRooflineRow {
    pub batch_size: u32,
    pub layer_index: usize,
    pub name: String,
    pub arithmetic_intensity: Option<f64>,
    pub arithmetic_throughput: Option<f64>,
    pub memory_bound: Option<bool>,
    pub excluded: bool,
}

pub fn layer_roofline(
    batch_size: u32,
    layers: &[LayerSummary],
    kernels: &[KernelSummary],
    spec: &SystemSpec,
) -> Vec<LayerRooflineRow> {
    kernels_by_layer(batch_size, layers, kernels, spec)
        .into_iter()
        .map(|r| LayerRooflineRow {
            batch_size,
            layer_index: r.layer_index,
            name: r.name,
            excluded: r.arithmetic_intensity.is_none(),
            arithmetic_intensity: r.arithmetic_intensity,
            arithmetic_throughput: r.arithmetic_throughput,
            memory_bound: r.memory_bound,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelAggregateRow {
    pub batch_size: u32,
    pub model_latency_ns: f64,
    pub kernel_count: usize,
    pub kernel_latency_ns: f64,
    pub total_flops: f64,
    pub total_dram_read_bytes: f64,
    pub total_dram_write_bytes: f64,
    pub achieved_occupancy: Option<f64>,
    pub arithmetic_intensity: Option<f64>,
    pub arithmetic_throughput: Option<f64>,
    pub memory_bound: Option<bool>,
}

pub fn model_aggregate(
    batch_size: u32,
    model_latency_ns: f64,
    kernels: &[KernelSummary],
    spec: &SystemSpec,
) -> ModelAggregateRow {
    let agg: AggregateMetrics = kernels.iter().map(|k| (k.latency_ns, &k.metrics)).collect();
    ModelAggregateRow {
        batch_size,
        model_latency_ns,
        kernel_count: agg.count,
        kernel_latency_ns: agg.total_latency_ns,
        total_flops: agg.total_flops,
        total_dram_read_bytes: agg.total_dram_read_bytes,
        total_dram_write_bytes: agg.total_dram_write_bytes,
        achieved_occupancy: agg.weighted_achieved_occupancy(),
        arithmetic_intensity: agg.arithmetic_intensity(),
        arithmetic_throughput: agg.arithmetic_throughput(),
        memory_bound: agg.memory_bound(spec),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelRooflineRow {
    pub batch_size: u32,
    pub arithmetic_intensity: Option<f64>,
    pub arithmetic_throughput: Option<f64>,
    pub memory_bound: Option<bool>,
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelRoofline {
    pub ideal_arithmetic_intensity: f64,
    pub peak_flops: f64,
    pub points: Vec<ModelRooflineRow>,
}

pub fn model_roofline_row(row: &ModelAggregateRow) -> ModelRooflineRow {
    ModelRooflineRow {
        batch_size: row.batch_size,
        arithmetic_intensity: row.arithmetic_intensity,
        arithmetic_throughput: row.arithmetic_throughput,
        memory_bound: row.memory_bound,
        excluded: row.arithmetic_intensity.is_none(),
    }
}

/// Dominant stage per quantity. Flops and memory access need kernels.
pub fn stage_attribution(
    batch_size: u32,
    layers: &[LayerSummary],
    kernels: Option<&[KernelSummary]>,
) -> StageAttribution {
    let lat: Vec<f64> = layers.iter().map(|l| l.latency_ns).collect();
    let alloc: Vec<f64> = layers.iter().map(|l| l.alloc_bytes).collect();
    let (flops, access) = match kernels {
        Some(k) => {
            let aggs = per_layer(layers.len(), k);
            let flops: Vec<f64> = aggs.iter().map(|a| a.total_flops).collect();
            let access: Vec<f64> =
                aggs.iter().map(|a| a.total_dram_read_bytes + a.total_dram_write_bytes).collect();
            (dominant_stage(&flops), dominant_stage(&access))
        }
        None => (None, None),
    };
    StageAttribution {
        batch_size,
        layer_count: layers.len(),
        split: layers.len() >= 3,
        latency: dominant_stage(&lat),
        alloc_memory: dominant_stage(&alloc),
        flops,
        memory_access: access,
    }
}

/// Number of rows with latency strictly below `threshold_ns`.
pub fn count_below(latencies: impl IntoIterator<Item = f64>, threshold_ns: f64) -> usize {
    latencies.into_iter().filter(|&l| l < threshold_ns).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(i: usize, ty: &str, lat_ms: f64) -> LayerSummary {
        LayerSummary {
            layer_index: i,
            name: format!("l{i}/{ty}"),
            layer_type: ty.into(),
            shape: None,
            latency_ns: lat_ms * 1e6,
            alloc_bytes: 0.0,
        }
    }

    fn kernel(layer_index: usize, name: &str, lat: f64, flops: f64, bytes: f64) -> KernelSummary {
        KernelSummary {
            name: name.into(),
            layer_index,
            ordinal: 0,
            latency_ns: lat,
            metrics: KernelMetrics { flop_count_sp: flops, dram_read_bytes: bytes, dram_write_bytes: 0.0, achieved_occupancy: 0.5 },
        }
    }

    #[test]
    fn type_aggregation() {
        let layers = [layer(0, "Conv2D", 2.0), layer(1, "Relu", 1.0), layer(2, "Conv2D", 3.0)];
        let rows = by_type(1, &layers);
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].layer_type.as_str(), rows[0].count, rows[0].total_latency_ns), ("Conv2D", 2, 5e6));
        assert_eq!((rows[1].layer_type.as_str(), rows[1].count, rows[1].total_latency_ns), ("Relu", 1, 1e6));
    }

    #[test]
    fn series_and_counts() {
        let layers = [layer(0, "A", 1.0), layer(1, "A", 2.0), layer(2, "A", 3.0)];
        let lat: Vec<f64> = layer_latency_series(1, &layers).iter().map(|p| p.latency_ns).collect();
        assert_eq!(lat, vec![1e6, 2e6, 3e6]);
        assert_eq!(count_below(lat, 1e6 + 1.0), 1);
        let mut rows = layer_table(1, &layers);
        sort_by_latency(&mut rows);
        assert_eq!(rows[0].layer_index, 2);
    }

    #[test]
    fn kernel_free_layer() {
        let layers = [layer(0, "Reshape", 1.0)];
        let split = gpu_split(1, &layers, &[], 0.01);
        assert_eq!(split[0].non_gpu_latency_ns, 1e6);
        let by_layer = kernels_by_layer(1, &layers, &[], &SystemSpec::tesla_v100());
        assert_eq!(by_layer[0].kernel_count, 0);
        assert_eq!(by_layer[0].arithmetic_intensity, None);
        assert!(layer_roofline(1, &layers, &[], &SystemSpec::tesla_v100())[0].excluded);
    }

    #[test]
    fn straggler_is_flagged() {
        let layers = [layer(0, "Conv2D", 1.0)];
        let split = gpu_split(1, &layers, &[kernel(0, "k", 1.5e6, 1.0, 1.0)], 0.01);
        assert!(split[0].flagged);
        assert!(split[0].non_gpu_latency_ns < 0.0);
    }

    #[test]
    fn by_name_percentage_uses_model_latency() {
        let ks = [kernel(0, "a", 3e6, 1.0, 1.0), kernel(1, "a", 1e6, 1.0, 1.0), kernel(1, "b", 1e6, 1.0, 1.0)];
        let rows = kernels_by_name(1, &ks, 10e6, &SystemSpec::tesla_v100());
        assert_eq!(rows[0].name, "a");
        assert_eq!(rows[0].count, 2);
        assert!((rows[0].latency_percentage - 40.0).abs() < 1e-12);
    }

    #[test]
    fn stage_attribution_degenerate() {
        let s = stage_attribution(1, &[layer(0, "A", 1.0)], None);
        assert!(!s.split);
        assert_eq!(s.latency, None);
        let layers = [layer(0, "A", 5.0), layer(1, "A", 1.0), layer(2, "A", 1.0)];
        assert_eq!(stage_attribution(1, &layers, None).latency, Some(Stage::B));
    }

    #[test]
    fn model_info_marks_rows() {
        let curve = [CurvePoint::new(1, 6.21e6), CurvePoint::new(2, 6.83e6)];
        let info = model_info(&curve, 0.05).unwrap();
        assert_eq!(info.rows.len(), 2);
        assert!((info.rows[0].throughput - 161.03).abs() < 0.01);
        assert_eq!(info.max_throughput_batch_size, 2);
        assert_eq!(info.online_latency_ns, 6.21e6);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("A9".parse::<AnalysisKind>().unwrap(), AnalysisKind::A9);
        assert_eq!("stages".parse::<AnalysisKind>().unwrap(), AnalysisKind::Stages);
        assert!("a16".parse::<AnalysisKind>().is_err());
        assert_eq!(AnalysisKind::A15.required_levels(), LevelSet::new([Level::Model, Level::Kernel]));
    }
}
