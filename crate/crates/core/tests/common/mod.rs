#![allow(dead_code)]

use stackscope::analysis::{AnalysisConfig, AnalysisKind, AnalysisOutput, Evaluation};
use stackscope::collector;
use stackscope::correlate::{self, AmbiguityReport, EntityTree};
use stackscope::leveled::{compute_overhead, LeveledRunGroup, OverheadConfig, OverheadReport};
use stackscope::sim::{emit_run, ground_truth, EmitConfig, GroundTruth, OverheadProfile, SyntheticModel, TruthConfig};
use stackscope::{LevelSet, TraceBundle};

pub fn chain_mlg() -> Vec<LevelSet> {
    vec![LevelSet::model(), LevelSet::model_layer(), LevelSet::full()]
}

/// Sends a bundle through the wire format and back.
pub fn wire(bundle: &TraceBundle) -> TraceBundle {
    let mut buf = Vec::new();
    collector::write_bundle(bundle, &mut buf).unwrap();
    collector::ingest(buf.as_slice()).unwrap()
}

pub struct Pipeline {
    pub trees: Vec<EntityTree>,
    pub ambiguity_before: Vec<AmbiguityReport>,
    pub ambiguity_after: Vec<AmbiguityReport>,
}

/// Emits every (batch, level set, repetition) run, then ingests and
/// correlates it. Runs with ambiguous parents are resolved against a
/// serialized twin of the same configuration.
pub fn run_pipeline(
    model: &SyntheticModel,
    batches: &[u32],
    chain: &[LevelSet],
    reps: u32,
    overhead: OverheadProfile,
) -> Pipeline {
    let mut out = Pipeline { trees: vec![], ambiguity_before: vec![], ambiguity_after: vec![] };
    let mut seed = 1000;
    for &b in batches {
        for set in chain {
            for rep in 0..reps {
                seed += 1;
                let mut cfg = EmitConfig::new(b, set.clone());
                cfg.overhead = overhead;
                cfg.seed = seed;
                cfg.run_index = rep;
                let bundle = wire(&emit_run(model, &cfg).unwrap());
                let c = correlate::correlate(&bundle).unwrap();
                out.ambiguity_before.push(c.ambiguity.clone());
                let c = if correlate::demand_serialized_rerun(&c.ambiguity) {
                    cfg.serialized = true;
                    cfg.seed += 500_000;
                    let twin = wire(&emit_run(model, &cfg).unwrap());
                    correlate::resolve_with_serialized(&bundle, &twin).unwrap()
                } else {
                    c
                };
                out.ambiguity_after.push(c.ambiguity.clone());
                out.trees.push(c.tree);
            }
        }
    }
    out
}

pub fn truth(
    model: &SyntheticModel,
    batches: &[u32],
    chain: &[LevelSet],
    reps: u32,
    overhead: OverheadProfile,
) -> GroundTruth {
    let mut cfg = TruthConfig::new(batches.to_vec(), chain.to_vec());
    cfg.overhead = overhead;
    cfg.repetitions = reps as usize;
    ground_truth(model, &cfg).unwrap()
}

pub fn analyses(trees: &[EntityTree]) -> Vec<(AnalysisKind, Result<AnalysisOutput, stackscope::analysis::AnalysisError>)> {
    let eval = Evaluation::from_trees(trees, 0.2).unwrap();
    let cfg = AnalysisConfig::default();
    AnalysisKind::ALL.iter().map(|&k| (k, eval.run(k, &cfg))).collect()
}

pub fn overheads(trees: &[EntityTree], batch: u32) -> OverheadReport {
    let group =
        LeveledRunGroup::from_trees(trees.iter().filter(|t| t.meta.batch_size == batch).cloned()).unwrap();
    compute_overhead(&group, &OverheadConfig::default()).unwrap()
}

/// Compares every analysis against the ground truth; returns mismatch
/// descriptions.
pub fn compare(pipeline: &Pipeline, truth: &GroundTruth, batches: &[u32]) -> Vec<String> {
    let mut bad = Vec::new();
    for (kind, got) in analyses(&pipeline.trees) {
        match (got, truth.outputs.get(&kind)) {
            (Ok(g), Some(t)) if &g == t => {}
            (Err(_), None) => {}
            (Ok(g), Some(t)) => bad.push(format!("{kind}: pipeline {:?}\n  truth {:?}", short(&g), short(t))),
            (Ok(_), None) => bad.push(format!("{kind}: pipeline produced output, truth has none")),
            (Err(e), Some(_)) => bad.push(format!("{kind}: pipeline failed: {e}")),
        }
    }
    for &b in batches {
        if let Some(t) = truth.overhead.get(&b) {
            let got = overheads(&pipeline.trees, b);
            if &got != t {
                bad.push(format!("overhead batch {b}: pipeline {:?}\n  truth {:?}", got.level_totals, t.level_totals));
            }
        }
    }
    bad
}

fn short(o: &AnalysisOutput) -> String {
    let s = format!("{o:?}");
    s.chars().take(600).collect()
}

use rand::seq::SliceRandom;
use rand::Rng;
use stackscope::span::Tags;
use stackscope::{KernelMetrics, Level, RunMeta, Span, SpanKind, SystemSpec};

pub fn meta(trace_id: u64, levels: LevelSet) -> RunMeta {
    RunMeta {
        trace_id,
        profiling_levels: levels,
        batch_size: 1,
        run_index: 0,
        system: SystemSpec::tesla_v100(),
        serialized: false,
    }
}

pub fn span(trace_id: u64, id: u64, level: Level, kind: SpanKind, begin: u64, end: u64) -> Span {
    Span {
        span_id: id,
        trace_id,
        parent_id: None,
        name: format!("{}_{id}", level.as_str()),
        level,
        kind,
        begin_ns: begin,
        end_ns: end,
        correlation_id: None,
        tags: Tags::new(),
    }
}

pub fn metric_tags(rng: &mut impl Rng) -> Tags {
    let mut tags = Tags::new();
    KernelMetrics {
        flop_count_sp: rng.gen_range(0..1_000_000_000u64) as f64,
        dram_read_bytes: rng.gen_range(0..100_000_000u64) as f64,
        dram_write_bytes: rng.gen_range(0..100_000_000u64) as f64,
        achieved_occupancy: rng.gen_range(0.0..=1.0),
    }
    .write_tags(&mut tags);
    tags
}

/// A random run of at most `max_spans` spans in which every layer and
/// launch has exactly one containing span one rank up. Layers are
/// separated by gaps; some spans carry an explicit parent_id. Execution
/// spans start at or after their launch and may outlive their layer.
pub fn nested_bundle(rng: &mut impl Rng, max_spans: usize) -> TraceBundle {
    let trace_id = rng.gen_range(1..u64::MAX >> 1);
    let mut ids: Vec<u64> = (1..=max_spans as u64 * 4).collect();
    ids.shuffle(rng);
    let mut next_id = ids.into_iter();
    let mut spans = Vec::new();
    let model_id = next_id.next().unwrap();
    let mut cursor = rng.gen_range(0..1000u64);
    let start = cursor;
    let mut cid = 0u64;
    let budget = max_spans.saturating_sub(1);
    let mut used = 0usize;
    let mut model_children = Vec::new();
    while used < budget {
        cursor += rng.gen_range(1..50);
        let layer_id = next_id.next().unwrap();
        let layer_begin = cursor;
        let mut layer = span(trace_id, layer_id, Level::Layer, SpanKind::Sync, layer_begin, 0);
        used += 1;
        let mut c = layer_begin;
        let kernels = rng.gen_range(0..6usize).min((budget - used) / 2);
        for _ in 0..kernels {
            let b = c + rng.gen_range(0..20);
            let e = b + rng.gen_range(0..30);
            c = e;
            if rng.gen_bool(0.2) {
                let mut k = span(trace_id, next_id.next().unwrap(), Level::Kernel, SpanKind::Sync, b, e);
                if rng.gen_bool(0.5) {
                    k.parent_id = Some(layer_id);
                }
                spans.push(k);
                used += 1;
            } else {
                cid += 1;
                let mut launch = span(trace_id, next_id.next().unwrap(), Level::Api, SpanKind::Launch, b, e);
                launch.correlation_id = Some(cid);
                if rng.gen_bool(0.3) {
                    launch.parent_id = Some(layer_id);
                }
                let eb = e + rng.gen_range(0..40);
                let mut exec =
                    span(trace_id, next_id.next().unwrap(), Level::Kernel, SpanKind::Exec, eb, eb + rng.gen_range(1..200));
                exec.correlation_id = Some(cid);
                exec.tags = metric_tags(rng);
                spans.push(launch);
                spans.push(exec);
                used += 2;
            }
        }
        cursor = c + rng.gen_range(0..20);
        layer.end_ns = cursor;
        if rng.gen_bool(0.5) {
            layer.parent_id = Some(model_id);
        }
        model_children.push(layer_id);
        spans.push(layer);
    }
    let end = spans.iter().map(|s| s.end_ns).max().unwrap_or(cursor).max(cursor) + rng.gen_range(0..10);
    spans.push(span(trace_id, model_id, Level::Model, SpanKind::Sync, start, end));
    TraceBundle::new(meta(trace_id, LevelSet::full()), spans)
}

/// Parent of every layer, launch and synchronous kernel span found by
/// scanning all spans; execution spans inherit their launch's parent.
pub fn containment_oracle(bundle: &TraceBundle) -> std::collections::BTreeMap<u64, u64> {
    let parents: Vec<&Span> = bundle.spans.iter().filter(|s| s.kind == SpanKind::Sync).collect();
    let mut out = std::collections::BTreeMap::new();
    let mut by_cid = std::collections::HashMap::new();
    for s in &bundle.spans {
        let rank = match (s.level, s.kind) {
            (Level::Model, _) | (_, SpanKind::Exec) => continue,
            (Level::Layer, _) => 1,
            _ => 2,
        };
        let found: Vec<&&Span> = parents
            .iter()
            .filter(|p| p.level.rank() == rank && p.begin_ns <= s.begin_ns && s.end_ns <= p.end_ns)
            .collect();
        if found.len() == 1 {
            out.insert(s.span_id, found[0].span_id);
            if let Some(c) = s.correlation_id {
                by_cid.insert(c, found[0].span_id);
            }
        }
    }
    for s in bundle.spans.iter().filter(|s| s.kind == SpanKind::Exec) {
        if let Some(p) = s.correlation_id.and_then(|c| by_cid.get(&c)) {
            out.insert(s.span_id, *p);
        }
    }
    out
}

/// One layer holding `n` launches whose correlation ids are shuffled, with
/// executions queued on one stream in launch order.
pub fn pair_bundle(rng: &mut impl Rng, n: usize) -> TraceBundle {
    let trace = 99;
    let mut cids: Vec<u64> = (1..=n as u64).map(|c| c * 7 + 3).collect();
    cids.shuffle(rng);
    let mut spans = vec![];
    let mut id = 10u64;
    let mut gpu = 0u64;
    for (i, cid) in cids.iter().enumerate() {
        let b = 10 + i as u64 * 10;
        let mut l = span(trace, id, Level::Api, SpanKind::Launch, b, b + 5);
        l.correlation_id = Some(*cid);
        let eb = gpu.max(b + 5);
        gpu = eb + rng.gen_range(1..30);
        let mut e = span(trace, id + 1, Level::Kernel, SpanKind::Exec, eb, gpu);
        e.correlation_id = Some(*cid);
        e.tags = metric_tags(rng);
        spans.push(l);
        spans.push(e);
        id += 2;
    }
    spans.shuffle(rng);
    let end = gpu.max(10 + n as u64 * 10) + 1;
    spans.push(span(trace, 1, Level::Model, SpanKind::Sync, 0, end + 1));
    spans.push(span(trace, 2, Level::Layer, SpanKind::Sync, 0, 10 + n as u64 * 10));
    TraceBundle::new(meta(trace, LevelSet::full()), spans)
}
