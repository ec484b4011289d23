//! Expected analysis output computed straight from the workload
//! description. Nothing here looks at spans, trees or the correlator.

use std::collections::BTreeMap;

use super::{OverheadProfile, SimError, SyntheticLayer, SyntheticModel};
use crate::analysis::{
    arithmetic_intensity, arithmetic_throughput, dominant_stage, ideal_arithmetic_intensity, optimal_batch_size,
    trimmed_mean, AnalysisConfig, AnalysisKind, AnalysisOutput, CurvePoint, GpuSplit, GpuSplitRow, KernelByLayerRow,
    KernelByNameRow, KernelInfoRow, KernelRooflineRow, LayerAllocPoint, LayerInfoRow, LayerLatencyPoint,
    LayerMetricsRow, LayerRooflineRow, LayerTypeRow, ModelAggregateRow, ModelGpuShare, ModelInfo, ModelInfoRow,
    ModelRoofline, ModelRooflineRow, StageAttribution,
};
use crate::leveled::{EventKey, EventOverhead, LevelOverhead, OverheadReport};
use crate::span::{Level, LevelSet, SystemSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct TruthConfig {
    pub batch_sizes: Vec<u32>,
    /// Level sets the runs were captured at, shallowest first.
    pub chain: Vec<LevelSet>,
    pub overhead: OverheadProfile,
    pub serialized: bool,
    pub repetitions: usize,
    pub system: SystemSpec,
    pub analysis: AnalysisConfig,
}

impl TruthConfig {
    pub fn new(batch_sizes: Vec<u32>, chain: Vec<LevelSet>) -> Self {
        TruthConfig {
            batch_sizes,
            chain,
            overhead: OverheadProfile::default(),
            serialized: false,
            repetitions: 1,
            system: SystemSpec::tesla_v100(),
            analysis: AnalysisConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Every analysis whose levels the chain supplies.
    pub outputs: BTreeMap<AnalysisKind, AnalysisOutput>,
    /// Per batch size; present when the chain has two or more sets.
    pub overhead: BTreeMap<u32, OverheadReport>,
}

/// Makespan of one run: the host walks the layers, concurrent layers
/// restart at the previous layer's start, and the run ends when both the
/// host and the GPU queue are done.
fn model_latency(model: &SyntheticModel, set: &LevelSet, overhead: &OverheadProfile, serialized: bool) -> u64 {
    let mut host = 0u64;
    let mut gpu = 0u64;
    let mut last_start = 0u64;
    for layer in &model.layers {
        let start = if layer.concurrent && !serialized { last_start } else { host };
        let mut t = start;
        for k in &layer.kernels {
            let issued = t + k.launch_latency_ns;
            gpu = issued.max(gpu) + k.true_latency_ns;
            t = issued + kernel_overhead(k.true_latency_ns, set, overhead);
        }
        let finish = start + layer_latency(layer, set, overhead);
        host = host.max(finish);
        if set.contains(Level::Layer) {
            host += overhead.layer_overhead_ns;
        }
        last_start = start;
    }
    host.max(gpu)
}

fn kernel_overhead(latency: u64, set: &LevelSet, overhead: &OverheadProfile) -> u64 {
    if set.contains(Level::Kernel) {
        overhead.kernel_overhead_ns + (overhead.metric_overhead_multiplier * latency as f64).round() as u64
    } else {
        0
    }
}

fn layer_latency(layer: &SyntheticLayer, set: &LevelSet, overhead: &OverheadProfile) -> u64 {
    layer.true_latency_ns + layer.kernels.iter().map(|k| kernel_overhead(k.true_latency_ns, set, overhead)).sum::<u64>()
}

struct Kernel {
    name: String,
    layer_index: usize,
    latency: f64,
    flops: f64,
    read: f64,
    write: f64,
    occupancy: f64,
}

struct Layer {
    name: String,
    layer_type: String,
    shape: Option<String>,
    latency: f64,
    alloc: f64,
}

struct Batch {
    batch_size: u32,
    model_latency: f64,
    layers: Vec<Layer>,
    kernels: Vec<Kernel>,
}

#[derive(Default, Clone, Copy)]
struct Sums {
    latency: f64,
    flops: f64,
    read: f64,
    write: f64,
    occupancy_weight: f64,
    count: usize,
}

impl Sums {
    fn add(&mut self, k: &Kernel) {
        self.latency += k.latency;
        self.flops += k.flops;
        self.read += k.read;
        self.write += k.write;
        self.occupancy_weight += k.occupancy * k.latency;
        self.count += 1;
    }

    fn occupancy(&self) -> Option<f64> {
        (self.latency > 0.0).then(|| self.occupancy_weight / self.latency)
    }

    fn intensity(&self) -> Option<f64> {
        arithmetic_intensity(self.flops, self.read, self.write)
    }

    fn throughput(&self) -> Option<f64> {
        arithmetic_throughput(self.flops, self.latency)
    }
}

fn percent(part: f64, whole: f64) -> f64 {
    if whole > 0.0 {
        part / whole * 100.0
    } else {
        0.0
    }
}

pub fn ground_truth(model: &SyntheticModel, config: &TruthConfig) -> Result<GroundTruth, SimError> {
    model.validate()?;
    if config.chain.is_empty() || config.batch_sizes.is_empty() || config.repetitions == 0 {
        return Err(SimError::InvalidModel("ground truth needs batch sizes, level sets and repetitions".into()));
    }
    let trim = config.analysis.trim_fraction;
    let reps = config.repetitions;
    let tm = |v: f64| trimmed_mean(&vec![v; reps], trim);
    let first_with = |level: Level| config.chain.iter().find(|s| s.contains(level));
    let available: LevelSet = config.chain.iter().flat_map(|s| s.iter()).collect();
    let spec = &config.system;
    let ideal = ideal_arithmetic_intensity(spec);

    let mut sizes = config.batch_sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let mut batches = Vec::new();
    for &b in &sizes {
        let m = model.at_batch(b);
        let model_latency =
            tm(model_latency(&m, &config.chain[0], &config.overhead, config.serialized) as f64)?;
        let mut layers = Vec::new();
        if let Some(set) = first_with(Level::Layer) {
            for l in &m.layers {
                layers.push(Layer {
                    name: l.name.clone(),
                    layer_type: l.layer_type.clone(),
                    shape: l.shape.clone(),
                    latency: tm(layer_latency(l, set, &config.overhead) as f64)?,
                    alloc: tm(l.alloc_bytes as f64)?,
                });
            }
        }
        let mut kernels = Vec::new();
        if first_with(Level::Kernel).is_some() {
            for (li, l) in m.layers.iter().enumerate() {
                for k in &l.kernels {
                    kernels.push(Kernel {
                        name: k.name.clone(),
                        layer_index: li,
                        latency: tm(k.true_latency_ns as f64)?,
                        flops: tm(k.metrics.flop_count_sp)?,
                        read: tm(k.metrics.dram_read_bytes)?,
                        write: tm(k.metrics.dram_write_bytes)?,
                        occupancy: tm(k.metrics.achieved_occupancy)?,
                    });
                }
            }
        }
        batches.push(Batch { batch_size: b, model_latency, layers, kernels });
    }
    let selected: Vec<&Batch> = match config.analysis.batch_size {
        Some(b) => batches.iter().filter(|x| x.batch_size == b).collect(),
        None => batches.iter().collect(),
    };

    let mut outputs = BTreeMap::new();
    for kind in AnalysisKind::ALL {
        if !kind.required_levels().iter().all(|l| available.contains(l)) {
            continue;
        }
        let out = match kind {
            AnalysisKind::A1 => AnalysisOutput::ModelInfo(expected_model_info(&batches, config.analysis.epsilon)?),
            AnalysisKind::A2 => AnalysisOutput::Layers(
                selected
                    .iter()
                    .flat_map(|b| {
                        b.layers.iter().enumerate().map(|(i, l)| LayerInfoRow {
                            batch_size: b.batch_size,
                            layer_index: i,
                            name: l.name.clone(),
                            layer_type: l.layer_type.clone(),
                            shape: l.shape.clone(),
                            latency_ns: l.latency,
                            alloc_bytes: l.alloc,
                        })
                    })
                    .collect(),
            ),
            AnalysisKind::A3 => AnalysisOutput::LayerLatency(
                selected
                    .iter()
                    .flat_map(|b| {
                        b.layers.iter().enumerate().map(|(i, l)| LayerLatencyPoint {
                            batch_size: b.batch_size,
                            layer_index: i,
                            latency_ns: l.latency,
                        })
                    })
                    .collect(),
            ),
            AnalysisKind::A4 => AnalysisOutput::LayerAlloc(
                selected
                    .iter()
                    .flat_map(|b| {
                        b.layers.iter().enumerate().map(|(i, l)| LayerAllocPoint {
                            batch_size: b.batch_size,
                            layer_index: i,
                            alloc_bytes: l.alloc,
                        })
                    })
                    .collect(),
            ),
            AnalysisKind::A5 | AnalysisKind::A6 | AnalysisKind::A7 => {
                let mut rows = Vec::new();
                for b in &selected {
                    let mut by: BTreeMap<&str, LayerTypeRow> = BTreeMap::new();
                    for l in &b.layers {
                        let r = by.entry(&l.layer_type).or_insert(LayerTypeRow {
                            batch_size: b.batch_size,
                            layer_type: l.layer_type.clone(),
                            count: 0,
                            total_latency_ns: 0.0,
                            total_alloc_bytes: 0.0,
                        });
                        r.count += 1;
                        r.total_latency_ns += l.latency;
                        r.total_alloc_bytes += l.alloc;
                    }
                    let mut part: Vec<LayerTypeRow> = by.into_values().collect();
                    part.sort_by(|x, y| {
                        let key = match kind {
                            AnalysisKind::A5 => y.count.cmp(&x.count),
                            AnalysisKind::A6 => y.total_latency_ns.total_cmp(&x.total_latency_ns),
                            _ => y.total_alloc_bytes.total_cmp(&x.total_alloc_bytes),
                        };
                        key.then_with(|| x.layer_type.cmp(&y.layer_type))
                    });
                    rows.extend(part);
                }
                AnalysisOutput::LayerTypes(rows)
            }
            AnalysisKind::A8 => AnalysisOutput::Kernels(
                selected
                    .iter()
                    .flat_map(|b| {
                        b.kernels.iter().enumerate().map(|(i, k)| {
                            let ai = arithmetic_intensity(k.flops, k.read, k.write);
                            KernelInfoRow {
                                batch_size: b.batch_size,
                                kernel_index: i,
                                name: k.name.clone(),
                                layer_index: k.layer_index,
                                latency_ns: k.latency,
                                flops: k.flops,
                                dram_read_bytes: k.read,
                                dram_write_bytes: k.write,
                                achieved_occupancy: k.occupancy,
                                arithmetic_intensity: ai,
                                arithmetic_throughput: arithmetic_throughput(k.flops, k.latency),
                                memory_bound: ai.map(|x| x < ideal),
                            }
                        })
                    })
                    .collect(),
            ),
            AnalysisKind::A9 => AnalysisOutput::KernelRoofline(
                selected
                    .iter()
                    .flat_map(|b| {
                        b.kernels.iter().enumerate().map(|(i, k)| {
                            let ai = arithmetic_intensity(k.flops, k.read, k.write);
                            KernelRooflineRow {
                                batch_size: b.batch_size,
                                kernel_index: i,
                                name: k.name.clone(),
                                layer_index: k.layer_index,
                                arithmetic_intensity: ai,
                                arithmetic_throughput: arithmetic_throughput(k.flops, k.latency),
                                memory_bound: ai.map(|x| x < ideal),
                                excluded: ai.is_none(),
                            }
                        })
                    })
                    .collect(),
            ),
            AnalysisKind::A10 => {
                let mut rows = Vec::new();
                for b in &selected {
                    let mut by: BTreeMap<&str, Sums> = BTreeMap::new();
                    for k in &b.kernels {
                        by.entry(&k.name).or_default().add(k);
                    }
                    let mut part: Vec<KernelByNameRow> = by
                        .into_iter()
                        .map(|(name, s)| KernelByNameRow {
                            batch_size: b.batch_size,
                            name: name.to_owned(),
                            count: s.count,
                            total_latency_ns: s.latency,
                            latency_percentage: percent(s.latency, b.model_latency),
                            total_flops: s.flops,
                            total_dram_read_bytes: s.read,
                            total_dram_write_bytes: s.write,
                            achieved_occupancy: s.occupancy(),
                            arithmetic_intensity: s.intensity(),
                            arithmetic_throughput: s.throughput(),
                            memory_bound: s.intensity().map(|x| x < ideal),
                        })
                        .collect();
                    part.sort_by(|x, y| {
                        y.total_latency_ns.total_cmp(&x.total_latency_ns).then_with(|| x.name.cmp(&y.name))
                    });
                    rows.extend(part);
                }
                AnalysisOutput::KernelsByName(rows)
            }
            AnalysisKind::A11 => AnalysisOutput::KernelsByLayer(
                selected
                    .iter()
                    .flat_map(|b| {
                        let sums = layer_sums(b);
                        b.layers
                            .iter()
                            .zip(sums)
                            .enumerate()
                            .map(|(i, (l, s))| KernelByLayerRow {
                                batch_size: b.batch_size,
                                layer_index: i,
                                name: l.name.clone(),
                                layer_type: l.layer_type.clone(),
                                layer_latency_ns: l.latency,
                                kernel_count: s.count,
                                kernel_latency_ns: s.latency,
                                total_flops: s.flops,
                                total_dram_read_bytes: s.read,
                                total_dram_write_bytes: s.write,
                                achieved_occupancy: s.occupancy(),
                                arithmetic_intensity: s.intensity(),
                                arithmetic_throughput: s.throughput(),
                                memory_bound: s.intensity().map(|x| x < ideal),
                            })
                            .collect::<Vec<_>>()
                    })
                    .collect(),
            ),
            AnalysisKind::A12 => AnalysisOutput::LayerMetrics(
                selected
                    .iter()
                    .flat_map(|b| {
                        layer_sums(b)
                            .into_iter()
                            .enumerate()
                            .map(|(i, s)| LayerMetricsRow {
                                batch_size: b.batch_size,
                                layer_index: i,
                                flops: s.flops,
                                dram_read_bytes: s.read,
                                dram_write_bytes: s.write,
                            })
                            .collect::<Vec<_>>()
                    })
                    .collect(),
            ),
            AnalysisKind::A13 => {
                let mut layers = Vec::new();
                let mut models = Vec::new();
                for b in &selected {
                    for (i, (l, s)) in b.layers.iter().zip(layer_sums(b)).enumerate() {
                        let non_gpu = l.latency - s.latency;
                        layers.push(GpuSplitRow {
                            batch_size: b.batch_size,
                            layer_index: i,
                            name: l.name.clone(),
                            layer_latency_ns: l.latency,
                            gpu_latency_ns: s.latency,
                            non_gpu_latency_ns: non_gpu,
                            gpu_share: (l.latency > 0.0).then(|| s.latency / l.latency),
                            non_gpu_share: (l.latency > 0.0).then(|| non_gpu / l.latency),
                            flagged: non_gpu < -config.analysis.non_gpu_tolerance * l.latency,
                        });
                    }
                    let gpu: f64 = b.kernels.iter().map(|k| k.latency).sum();
                    models.push(ModelGpuShare {
                        batch_size: b.batch_size,
                        model_latency_ns: b.model_latency,
                        gpu_latency_ns: gpu,
                        gpu_latency_percentage: percent(gpu, b.model_latency),
                    });
                }
                AnalysisOutput::GpuSplit(GpuSplit { layers, models })
            }
            AnalysisKind::A14 => AnalysisOutput::LayerRoofline(
                selected
                    .iter()
                    .flat_map(|b| {
                        b.layers
                            .iter()
                            .zip(layer_sums(b))
                            .enumerate()
                            .map(|(i, (l, s))| LayerRooflineRow {
                                batch_size: b.batch_size,
                                layer_index: i,
                                name: l.name.clone(),
                                arithmetic_intensity: s.intensity(),
                                arithmetic_throughput: s.throughput(),
                                memory_bound: s.intensity().map(|x| x < ideal),
                                excluded: s.intensity().is_none(),
                            })
                            .collect::<Vec<_>>()
                    })
                    .collect(),
            ),
            AnalysisKind::A15 => {
                AnalysisOutput::ModelAggregate(batches.iter().map(|b| expected_model_row(b, ideal)).collect())
            }
            AnalysisKind::Roofline => AnalysisOutput::ModelRoofline(ModelRoofline {
                ideal_arithmetic_intensity: ideal,
                peak_flops: spec.peak_flops,
                points: batches
                    .iter()
                    .map(|b| {
                        let r = expected_model_row(b, ideal);
                        ModelRooflineRow {
                            batch_size: r.batch_size,
                            arithmetic_intensity: r.arithmetic_intensity,
                            arithmetic_throughput: r.arithmetic_throughput,
                            memory_bound: r.memory_bound,
                            excluded: r.arithmetic_intensity.is_none(),
                        }
                    })
                    .collect(),
            }),
            AnalysisKind::Stages => AnalysisOutput::Stages(
                selected
                    .iter()
                    .map(|b| {
                        let lat: Vec<f64> = b.layers.iter().map(|l| l.latency).collect();
                        let alloc: Vec<f64> = b.layers.iter().map(|l| l.alloc).collect();
                        let with_kernels = available.contains(Level::Kernel);
                        let sums = layer_sums(b);
                        let flops: Vec<f64> = sums.iter().map(|s| s.flops).collect();
                        let access: Vec<f64> = sums.iter().map(|s| s.read + s.write).collect();
                        StageAttribution {
                            batch_size: b.batch_size,
                            layer_count: b.layers.len(),
                            split: b.layers.len() >= 3,
                            latency: dominant_stage(&lat),
                            alloc_memory: dominant_stage(&alloc),
                            flops: if with_kernels { dominant_stage(&flops) } else { None },
                            memory_access: if with_kernels { dominant_stage(&access) } else { None },
                        }
                    })
                    .collect(),
            ),
        };
        outputs.insert(kind, out);
    }

    let mut overhead = BTreeMap::new();
    if config.chain.len() >= 2 {
        for &b in &sizes {
            overhead.insert(b, expected_overhead(&model.at_batch(b), config)?);
        }
    }
    Ok(GroundTruth { outputs, overhead })
}

fn layer_sums(b: &Batch) -> Vec<Sums> {
    let mut out = vec![Sums::default(); b.layers.len()];
    for k in &b.kernels {
        if let Some(s) = out.get_mut(k.layer_index) {
            s.add(k);
        }
    }
    out
}

fn expected_model_row(b: &Batch, ideal: f64) -> ModelAggregateRow {
    let mut s = Sums::default();
    for k in &b.kernels {
        s.add(k);
    }
    ModelAggregateRow {
        batch_size: b.batch_size,
        model_latency_ns: b.model_latency,
        kernel_count: s.count,
        kernel_latency_ns: s.latency,
        total_flops: s.flops,
        total_dram_read_bytes: s.read,
        total_dram_write_bytes: s.write,
        achieved_occupancy: s.occupancy(),
        arithmetic_intensity: s.intensity(),
        arithmetic_throughput: s.throughput(),
        memory_bound: s.intensity().map(|x| x < ideal),
    }
}

fn expected_model_info(batches: &[Batch], epsilon: f64) -> Result<ModelInfo, SimError> {
    let curve: Vec<CurvePoint> = batches
        .iter()
        .map(|b| CurvePoint {
            batch_size: b.batch_size,
            throughput: b.batch_size as f64 / (b.model_latency * 1e-9),
            latency_ns: b.model_latency,
        })
        .collect();
    let opt = optimal_batch_size(&curve, epsilon)?;
    let mut best = curve[0];
    for p in &curve {
        if p.throughput > best.throughput {
            best = *p;
        }
    }
    Ok(ModelInfo {
        rows: curve
            .iter()
            .map(|p| ModelInfoRow {
                batch_size: p.batch_size,
                latency_ns: p.latency_ns,
                throughput: p.throughput,
                online: p.batch_size == curve[0].batch_size,
                max_throughput: p.batch_size == best.batch_size,
                optimal: p.batch_size == opt.batch_size,
            })
            .collect(),
        online_latency_ns: curve[0].latency_ns,
        max_throughput: best.throughput,
        max_throughput_batch_size: best.batch_size,
        optimal_batch_size: opt.batch_size,
        warning: opt.warning,
    })
}

fn expected_overhead(m: &SyntheticModel, config: &TruthConfig) -> Result<OverheadReport, SimError> {
    let trim = config.analysis.trim_fraction;
    let tm = |v: u64| trimmed_mean(&vec![v as f64; config.repetitions], trim);
    let step = |(from, before): &(LevelSet, f64), (to, after): &(LevelSet, f64)| LevelOverhead {
        from: from.clone(),
        to: to.clone(),
        added: to.deepest().unwrap_or(Level::Model),
        overhead_ns: after - before,
        flag: None,
    };
    let mut events = Vec::new();
    let mut latencies = Vec::new();
    for set in &config.chain {
        latencies.push((set.clone(), tm(model_latency(m, set, &config.overhead, config.serialized))?));
    }
    events.push(EventOverhead {
        event: EventKey::Model,
        name: m.name.clone(),
        accurate_latency_ns: latencies.iter().find(|(s, _)| s.deepest() == Some(Level::Model)).map(|x| x.1),
        overheads: latencies.windows(2).map(|w| step(&w[0], &w[1])).collect(),
        latencies,
    });
    if config.chain.iter().any(|s| s.contains(Level::Layer)) {
        for (i, layer) in m.layers.iter().enumerate() {
            let mut latencies = Vec::new();
            for set in config.chain.iter().filter(|s| s.contains(Level::Layer)) {
                latencies.push((set.clone(), tm(layer_latency(layer, set, &config.overhead))?));
            }
            events.push(EventOverhead {
                event: EventKey::Layer { layer_index: i },
                name: layer.name.clone(),
                accurate_latency_ns: latencies
                    .iter()
                    .find(|(s, _)| s.deepest() == Some(Level::Layer))
                    .map(|x| x.1),
                overheads: latencies.windows(2).map(|w| step(&w[0], &w[1])).collect(),
                latencies,
            });
        }
    }
    let model = &events[0];
    Ok(OverheadReport {
        batch_size: m.reference_batch,
        chain: config.chain.clone(),
        level_totals: model.overheads.clone(),
        combined_overhead_ns: model.latencies[model.latencies.len() - 1].1 - model.latencies[0].1,
        events,
        unmatched: Vec::new(),
        noise_tolerance: 0.01,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::fixtures;

    #[test]
    fn single_kernel_intensity() {
        let m = fixtures::builtin("minimal").unwrap();
        let t = ground_truth(&m, &TruthConfig::new(vec![1], vec![LevelSet::full()])).unwrap();
        let k = &m.layers[0].kernels[0].metrics;
        match &t.outputs[&AnalysisKind::A9] {
            AnalysisOutput::KernelRoofline(rows) => {
                assert_eq!(rows.len(), 1);
                assert_eq!(rows[0].arithmetic_intensity, Some(k.flop_count_sp / (k.dram_read_bytes + k.dram_write_bytes)));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overheads_equal_injection() {
        let m = fixtures::builtin("minimal").unwrap();
        let mut cfg =
            TruthConfig::new(vec![1], vec![LevelSet::model(), LevelSet::model_layer(), LevelSet::full()]);
        cfg.overhead = OverheadProfile { layer_overhead_ns: 700, kernel_overhead_ns: 50, metric_overhead_multiplier: 0.0 };
        let t = ground_truth(&m, &cfg).unwrap();
        let r = &t.overhead[&1];
        assert_eq!(r.level_totals[0].overhead_ns, 700.0);
        assert_eq!(r.level_totals[1].overhead_ns, 50.0);
        assert_eq!(t.outputs.len(), AnalysisKind::ALL.len());
    }
}
