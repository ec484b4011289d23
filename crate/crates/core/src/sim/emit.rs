use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SimError, SyntheticModel};
use crate::clock::VirtualClock;
use crate::collector;
use crate::span::{Level, LevelSet, RunMeta, SystemSpec, TagValue, Tags, TraceBundle, TAG_ALLOC_BYTES, TAG_LAYER_TYPE, TAG_SHAPE};
use crate::tracer::{IdGenerator, MemorySink, PendingSpan, SpanHandle, Tracer, TracerConfig};

pub const LAUNCH_NAME: &str = "cudaLaunchKernel";

/// Profiling cost injected per captured event.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OverheadProfile {
    /// Added after every layer span when layer profiling is on.
    pub layer_overhead_ns: u64,
    /// Added inside the layer for every kernel when kernel profiling is on.
    pub kernel_overhead_ns: u64,
    /// Extra per-kernel cost of metric capture, as a multiple of the
    /// kernel's latency.
    pub metric_overhead_multiplier: f64,
}

impl OverheadProfile {
    /// Overhead charged for one kernel of the given latency.
    pub fn per_kernel_ns(&self, kernel_latency_ns: u64) -> u64 {
        self.kernel_overhead_ns + (self.metric_overhead_multiplier * kernel_latency_ns as f64).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmitConfig {
    pub batch_size: u32,
    pub levels: LevelSet,
    pub overhead: OverheadProfile,
    pub serialized: bool,
    pub seed: u64,
    pub run_index: u32,
    pub system: SystemSpec,
    /// Upper bound of uniform noise added to every layer and kernel
    /// latency. Zero keeps runs exact.
    pub jitter_ns: u64,
}

impl EmitConfig {
    pub fn new(batch_size: u32, levels: LevelSet) -> Self {
        EmitConfig {
            batch_size,
            levels,
            overhead: OverheadProfile::default(),
            serialized: false,
            seed: 0,
            run_index: 0,
            system: SystemSpec::tesla_v100(),
            jitter_ns: 0,
        }
    }
}

struct Lane {
    clock: VirtualClock,
    tracer: Tracer,
    sink: MemorySink,
}

impl Lane {
    fn new(trace_id: u64, levels: &LevelSet, ids: &IdGenerator) -> Lane {
        let clock = VirtualClock::new(0);
        let sink = MemorySink::new();
        let tracer = Tracer::new(
            trace_id,
            TracerConfig::new(levels.clone()),
            Arc::new(clock.clone()),
            ids.clone(),
            Box::new(sink.clone()),
        );
        Lane { clock, tracer, sink }
    }
}

/// Runs the workload once on a virtual clock, publishing spans through
/// one tracer per simulated worker plus one for the GPU, and merges the
/// streams into a bundle.
pub fn emit_run(model: &SyntheticModel, config: &EmitConfig) -> Result<TraceBundle, SimError> {
    model.validate()?;
    if config.batch_size == 0 {
        return Err(SimError::InvalidModel("batch size must be positive".into()));
    }
    let model = model.at_batch(config.batch_size);
    let levels = {
        let mut l = config.levels.clone();
        l.insert(Level::Model);
        l
    };
    let trace_id = ChaCha8Rng::seed_from_u64(config.seed).next_u64() >> 1;
    let ids = IdGenerator::seeded(config.seed);
    let mut jitter = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut noise = |max: u64| if max == 0 { 0 } else { jitter.gen_range(0..=max) };
    let layer_on = levels.contains(Level::Layer);
    let kernel_on = levels.contains(Level::Kernel);

    let mut lanes = vec![Lane::new(trace_id, &levels, &ids)];
    let gpu = Lane::new(trace_id, &levels, &ids);
    let mut model_span = lanes[0].tracer.start_span(model.name.clone(), Level::Model, None, Tags::new());

    let mut cursor = 0u64;
    let mut gpu_free = 0u64;
    let mut prev_begin = 0u64;
    let mut lane_idx = 0usize;
    let mut correlation = 1u64;
    for layer in &model.layers {
        let overlapped = layer.concurrent && !config.serialized;
        let begin = if overlapped { prev_begin } else { cursor };
        lane_idx = if overlapped { lane_idx + 1 } else { 0 };
        if lane_idx == lanes.len() {
            lanes.push(Lane::new(trace_id, &levels, &ids));
        }
        let lane = &lanes[lane_idx];
        lane.clock.set(begin);
        let mut tags = Tags::new();
        tags.insert(TAG_LAYER_TYPE.into(), TagValue::from(layer.layer_type.as_str()));
        tags.insert(TAG_ALLOC_BYTES.into(), TagValue::Int(layer.alloc_bytes as i64));
        if let Some(shape) = &layer.shape {
            tags.insert(TAG_SHAPE.into(), TagValue::from(shape.as_str()));
        }
        let mut handle: SpanHandle = lane.tracer.start_span(layer.name.clone(), Level::Layer, Some(&model_span), tags);

        let mut c = begin;
        let mut added = 0u64;
        for k in &layer.kernels {
            let latency = k.true_latency_ns + noise(config.jitter_ns);
            let launch_end = c + k.launch_latency_ns;
            let exec_begin = launch_end.max(gpu_free);
            gpu_free = exec_begin + latency;
            let oh = if kernel_on { config.overhead.per_kernel_ns(latency) } else { 0 };
            let mut exec_tags = Tags::new();
            k.metrics.write_tags(&mut exec_tags);
            gpu.tracer.record_async_pair(
                PendingSpan {
                    name: LAUNCH_NAME.into(),
                    level: Level::Api,
                    begin_ns: c,
                    end_ns: launch_end,
                    parent_id: None,
                    correlation_id: correlation,
                    tags: Tags::new(),
                },
                PendingSpan {
                    name: k.name.clone(),
                    level: Level::Kernel,
                    begin_ns: exec_begin,
                    end_ns: gpu_free,
                    parent_id: None,
                    correlation_id: correlation,
                    tags: exec_tags,
                },
            )?;
            correlation += 1;
            c = launch_end + oh;
            added += oh;
        }
        let end = begin + layer.true_latency_ns + noise(config.jitter_ns) + added;
        lane.clock.set(end);
        lane.tracer.finish_span(&mut handle)?;
        prev_begin = begin;
        cursor = cursor.max(end);
        if layer_on {
            cursor += config.overhead.layer_overhead_ns;
        }
    }
    lanes[0].clock.set(cursor.max(gpu_free));
    lanes[0].tracer.finish_span(&mut model_span)?;

    let meta = RunMeta {
        trace_id,
        profiling_levels: levels,
        batch_size: config.batch_size,
        run_index: config.run_index,
        system: config.system.clone(),
        serialized: config.serialized,
    };
    let mut parts = Vec::new();
    for lane in lanes.iter().chain([&gpu]) {
        lane.tracer.flush()?;
        parts.push(TraceBundle::new(meta.clone(), lane.sink.take()));
    }
    Ok(collector::merge(parts)?)
}
