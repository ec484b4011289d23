//! Hierarchy reconstruction.
//!
//! Spans captured by disjoint profilers carry no parent reference. A span
//! `s1` is the parent of `s2` when `[s1]` contains `[s2]` (closed intervals)
//! and `s1` sits exactly one rank above `s2`. An explicit `parent_id` from
//! the tracer wins when it names a containing span at the adjacent rank.
//! A span with several candidate parents is ambiguous: it is left out of
//! the tree and listed in the [`AmbiguityReport`]; the fix is a rerun with
//! parallel events serialized (see [`resolve_with_serialized`]).
//!
//! Asynchronous kernels are fused in [`correlate_async`]: the launch span
//! fixes the parent layer, the execution span with the same correlation id
//! supplies timing and metrics.

pub mod interval;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::span::{
    KernelMetrics, Level, RunMeta, Span, SpanKind, TagValue, TraceBundle, TAG_ALLOC_BYTES, TAG_LAYER_TYPE, TAG_SHAPE,
};
use interval::{Interval, IntervalTree};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CorrelateError {
    #[error("bundle has no model span")]
    NoModelSpan,
    #[error("bundle has {0} model spans; expected one")]
    MultipleModelSpans(usize),
    #[error("kernel spans present but layer-level profiling was not enabled")]
    KernelWithoutLayer,
    #[error("correlation id {correlation_id} is shared by {count} {kind} spans")]
    DuplicateCorrelationId { correlation_id: u64, kind: &'static str, count: usize },
}

/// A fused asynchronous kernel: launch span for placement, execution span
/// for timing and metrics. Synchronous kernel spans use the same span for
/// both.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelExec {
    pub launch: Span,
    pub exec: Span,
    pub metrics: KernelMetrics,
}

impl KernelExec {
    pub fn name(&self) -> &str {
        &self.exec.name
    }

    pub fn latency_ns(&self) -> u64 {
        self.exec.duration_ns()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerExec {
    pub span: Span,
    /// 0-based execution order.
    pub layer_index: usize,
    pub layer_type: String,
    pub alloc_bytes: f64,
    pub shape: Option<String>,
    /// Launch spans placed under this layer and not yet fused.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub launches: Vec<Span>,
    pub kernels: Vec<KernelExec>,
}

impl LayerExec {
    pub fn name(&self) -> &str {
        &self.span.name
    }

    pub fn latency_ns(&self) -> u64 {
        self.span.duration_ns()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelRun {
    pub span: Span,
    pub layers: Vec<LayerExec>,
}

/// Correlated model → layer → kernel hierarchy of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntityTree {
    pub meta: RunMeta,
    pub model: ModelRun,
}

impl EntityTree {
    pub fn model_latency_ns(&self) -> u64 {
        self.model.span.duration_ns()
    }

    pub fn layers(&self) -> &[LayerExec] {
        &self.model.layers
    }

    pub fn kernels(&self) -> impl Iterator<Item = &KernelExec> {
        self.model.layers.iter().flat_map(|l| l.kernels.iter())
    }

    /// Child span id → parent span id for every placed span.
    pub fn parent_map(&self) -> BTreeMap<u64, u64> {
        let mut out = BTreeMap::new();
        for layer in &self.model.layers {
            out.insert(layer.span.span_id, self.model.span.span_id);
            for launch in &layer.launches {
                out.insert(launch.span_id, layer.span.span_id);
            }
            for k in &layer.kernels {
                out.insert(k.launch.span_id, layer.span.span_id);
                out.insert(k.exec.span_id, layer.span.span_id);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Ambiguity {
    pub span_id: u64,
    pub candidates: Vec<u64>,
}

/// Spans with more than one candidate parent and no explicit parent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AmbiguityReport {
    pub entries: Vec<Ambiguity>,
}

impl AmbiguityReport {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

/// Whether the run must be repeated with parallel events serialized
/// (e.g. `CUDA_LAUNCH_BLOCKING=1`) to settle ambiguous parents.
pub fn demand_serialized_rerun(report: &AmbiguityReport) -> bool {
    !report.is_empty()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "diagnostic", rename_all = "snake_case")]
pub enum Diagnostic {
    /// No span at the adjacent rank contains this span.
    NoContainingParent { span_id: u64 },
    /// The explicit parent is missing, at the wrong rank, or does not
    /// contain the span; containment was used instead.
    InvalidExplicitParent { span_id: u64, parent_id: u64 },
    /// The parent was itself left out of the tree.
    ParentOmitted { span_id: u64, parent_id: u64 },
    UnmatchedLaunch { span_id: u64, correlation_id: u64 },
    UnmatchedExec { span_id: u64, correlation_id: u64 },
    /// The execution span matched a launch that could not be placed.
    UnplacedLaunch { span_id: u64, correlation_id: u64 },
}

/// Output of parent assignment and async fusion for one bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    pub tree: EntityTree,
    pub ambiguity: AmbiguityReport,
    pub diagnostics: Vec<Diagnostic>,
}

fn is_child_candidate(s: &Span) -> bool {
    match s.level {
        Level::Model => false,
        Level::Layer => s.kind == SpanKind::Sync,
        Level::Kernel | Level::Api => s.kind != SpanKind::Exec,
    }
}

fn is_parent_candidate(s: &Span) -> bool {
    s.kind == SpanKind::Sync && matches!(s.level, Level::Model | Level::Layer)
}

fn layer_from_span(span: Span, layer_index: usize) -> LayerExec {
    let layer_type = span
        .tag(TAG_LAYER_TYPE)
        .and_then(TagValue::as_str)
        .map(str::to_owned)
        .unwrap_or_else(|| infer_layer_type(&span.name));
    let alloc_bytes = span.tag(TAG_ALLOC_BYTES).and_then(TagValue::as_f64).unwrap_or(0.0);
    let shape = span.tag(TAG_SHAPE).and_then(TagValue::as_str).map(str::to_owned);
    LayerExec { span, layer_index, layer_type, alloc_bytes, shape, launches: Vec::new(), kernels: Vec::new() }
}

/// `conv2d_48/Conv2D` → `Conv2D`.
fn infer_layer_type(name: &str) -> String {
    name.rsplit('/').next().unwrap_or(name).to_owned()
}

/// Rebuilds parent links and returns the tree of placed spans. Launch
/// spans are attached to their layer but not yet fused with executions.
pub fn assign_parents(bundle: &TraceBundle) -> Result<Correlation, CorrelateError> {
    let models: Vec<usize> = bundle
        .spans
        .iter()
        .enumerate()
        .filter(|(_, s)| s.level == Level::Model && s.kind == SpanKind::Sync)
        .map(|(i, _)| i)
        .collect();
    let model_idx = match models.len() {
        0 => return Err(CorrelateError::NoModelSpan),
        1 => models[0],
        n => return Err(CorrelateError::MultipleModelSpans(n)),
    };
    let has_kernels = bundle.spans.iter().any(|s| s.level.rank() == 3);
    if has_kernels && !bundle.meta.profiling_levels.contains(Level::Layer) {
        return Err(CorrelateError::KernelWithoutLayer);
    }

    let spans = &bundle.spans;
    let by_id: HashMap<u64, usize> = spans.iter().enumerate().map(|(i, s)| (s.span_id, i)).collect();
    let mut trees: HashMap<u8, IntervalTree<usize>> = HashMap::new();
    for rank in [1u8, 2] {
        let ivs = spans
            .iter()
            .enumerate()
            .filter(|(_, s)| is_parent_candidate(s) && s.level.rank() == rank)
            .map(|(i, s)| Interval { begin: s.begin_ns, end: s.end_ns, value: i });
        trees.insert(rank, IntervalTree::new(ivs));
    }

    let mut parent_of: Vec<Option<usize>> = vec![None; spans.len()];
    let mut ambiguity = AmbiguityReport::default();
    let mut diagnostics = Vec::new();
    let mut unplaced: HashSet<usize> = HashSet::new();

    for (i, s) in spans.iter().enumerate() {
        if !is_child_candidate(s) {
            continue;
        }
        let parent_rank = s.level.rank() - 1;
        if let Some(pid) = s.parent_id {
            match by_id.get(&pid) {
                Some(&p)
                    if is_parent_candidate(&spans[p])
                        && spans[p].level.rank() == parent_rank
                        && spans[p].contains(s) =>
                {
                    parent_of[i] = Some(p);
                    continue;
                }
                _ => diagnostics.push(Diagnostic::InvalidExplicitParent { span_id: s.span_id, parent_id: pid }),
            }
        }
        let candidates = trees[&parent_rank].containing(s.begin_ns, s.end_ns);
        match candidates.len() {
            0 => {
                unplaced.insert(i);
                diagnostics.push(Diagnostic::NoContainingParent { span_id: s.span_id });
            }
            1 => parent_of[i] = Some(candidates[0].value),
            _ => {
                let exact: Vec<usize> = candidates
                    .iter()
                    .filter(|c| c.begin == s.begin_ns && c.end == s.end_ns)
                    .map(|c| c.value)
                    .collect();
                if exact.len() == 1 {
                    parent_of[i] = Some(exact[0]);
                } else {
                    unplaced.insert(i);
                    let mut ids: Vec<u64> = candidates.iter().map(|c| spans[c.value].span_id).collect();
                    ids.sort_unstable();
                    ambiguity.entries.push(Ambiguity { span_id: s.span_id, candidates: ids });
                }
            }
        }
    }

    let mut layers: Vec<LayerExec> = Vec::new();
    let mut layer_slot: HashMap<usize, usize> = HashMap::new();
    for (i, s) in spans.iter().enumerate() {
        if s.level == Level::Layer && is_child_candidate(s) && parent_of[i] == Some(model_idx) {
            layer_slot.insert(i, layers.len());
            layers.push(layer_from_span(s.clone(), layers.len()));
        }
    }
    for (i, s) in spans.iter().enumerate() {
        if s.level.rank() != 3 || !is_child_candidate(s) {
            continue;
        }
        let Some(p) = parent_of[i] else { continue };
        match layer_slot.get(&p) {
            Some(&slot) => match s.kind {
                SpanKind::Launch => layers[slot].launches.push(s.clone()),
                _ => layers[slot].kernels.push(KernelExec {
                    launch: s.clone(),
                    exec: s.clone(),
                    metrics: KernelMetrics::from_tags(&s.tags),
                }),
            },
            None => diagnostics
                .push(Diagnostic::ParentOmitted { span_id: s.span_id, parent_id: spans[p].span_id }),
        }
    }

    Ok(Correlation {
        tree: EntityTree { meta: bundle.meta.clone(), model: ModelRun { span: spans[model_idx].clone(), layers } },
        ambiguity,
        diagnostics,
    })
}

fn index_by_correlation<'a>(
    bundle: &'a TraceBundle,
    kind: SpanKind,
) -> Result<HashMap<u64, &'a Span>, CorrelateError> {
    let mut map: HashMap<u64, &Span> = HashMap::new();
    let mut dupes: BTreeMap<u64, usize> = BTreeMap::new();
    for s in bundle.spans.iter().filter(|s| s.kind == kind) {
        if let Some(cid) = s.correlation_id {
            if map.insert(cid, s).is_some() {
                *dupes.entry(cid).or_insert(1) += 1;
            }
        }
    }
    if let Some((&correlation_id, &count)) = dupes.iter().next() {
        let kind = if kind == SpanKind::Exec { "exec" } else { "launch" };
        return Err(CorrelateError::DuplicateCorrelationId { correlation_id, kind, count });
    }
    Ok(map)
}

/// Fuses every placed launch span with the execution span sharing its
/// correlation id. Unmatched halves become diagnostics and are left out.
pub fn correlate_async(
    mut tree: EntityTree,
    bundle: &TraceBundle,
) -> Result<(EntityTree, Vec<Diagnostic>), CorrelateError> {
    let execs = index_by_correlation(bundle, SpanKind::Exec)?;
    let launches = index_by_correlation(bundle, SpanKind::Launch)?;
    let mut used: HashSet<u64> = HashSet::new();
    let mut diagnostics = Vec::new();
    for layer in &mut tree.model.layers {
        for launch in std::mem::take(&mut layer.launches) {
            let cid = launch.correlation_id.unwrap_or_default();
            match execs.get(&cid) {
                Some(exec) => {
                    used.insert(cid);
                    layer.kernels.push(KernelExec {
                        metrics: KernelMetrics::from_tags(&exec.tags),
                        exec: (*exec).clone(),
                        launch,
                    });
                }
                None => diagnostics.push(Diagnostic::UnmatchedLaunch { span_id: launch.span_id, correlation_id: cid }),
            }
        }
        layer.kernels.sort_by_key(|k| k.launch.timeline_key());
    }
    let mut leftover: Vec<(&u64, &&Span)> = execs.iter().filter(|(cid, _)| !used.contains(cid)).collect();
    leftover.sort_by_key(|(_, s)| s.timeline_key());
    for (&cid, exec) in leftover {
        let d = if launches.contains_key(&cid) {
            Diagnostic::UnplacedLaunch { span_id: exec.span_id, correlation_id: cid }
        } else {
            Diagnostic::UnmatchedExec { span_id: exec.span_id, correlation_id: cid }
        };
        diagnostics.push(d);
    }
    Ok((tree, diagnostics))
}

/// Parent assignment followed by async fusion.
pub fn correlate(bundle: &TraceBundle) -> Result<Correlation, CorrelateError> {
    let Correlation { tree, ambiguity, mut diagnostics } = assign_parents(bundle)?;
    let (tree, more) = correlate_async(tree, bundle)?;
    diagnostics.extend(more);
    Ok(Correlation { tree, ambiguity, diagnostics })
}

/// Layers are matched across runs by name and occurrence count, which is
/// stable under reordering of concurrent layers.
fn layer_keys(layers: &[LayerExec]) -> Vec<(String, usize)> {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    layers
        .iter()
        .map(|l| {
            let n = seen.entry(l.name()).or_insert(0);
            *n += 1;
            (l.name().to_owned(), *n - 1)
        })
        .collect()
}

/// Settles ambiguous parents using a rerun of the same workload with
/// parallel events serialized. Each serialized layer tells how many
/// kernels of each name it launches; an ambiguous launch goes to the one
/// candidate layer whose serialized twin still has an unclaimed kernel of
/// that name.
pub fn resolve_with_serialized(
    ambiguous: &TraceBundle,
    serialized: &TraceBundle,
) -> Result<Correlation, CorrelateError> {
    let reference = correlate(serialized)?;
    let mut quota: HashMap<(String, usize), HashMap<String, usize>> = HashMap::new();
    for (key, layer) in layer_keys(&reference.tree.model.layers).into_iter().zip(&reference.tree.model.layers) {
        let counts = quota.entry(key).or_default();
        for k in &layer.kernels {
            *counts.entry(k.name().to_owned()).or_default() += 1;
        }
    }

    let Correlation { mut tree, ambiguity, mut diagnostics } = assign_parents(ambiguous)?;
    let exec_names: HashMap<u64, &str> = ambiguous
        .spans
        .iter()
        .filter(|s| s.kind == SpanKind::Exec)
        .filter_map(|s| s.correlation_id.map(|c| (c, s.name.as_str())))
        .collect();
    let kernel_name = |s: &Span| -> String {
        match s.kind {
            SpanKind::Launch => s
                .correlation_id
                .and_then(|c| exec_names.get(&c).copied())
                .unwrap_or(s.name.as_str())
                .to_owned(),
            _ => s.name.clone(),
        }
    };

    let keys = layer_keys(&tree.model.layers);
    let slot_by_span: HashMap<u64, usize> =
        tree.model.layers.iter().enumerate().map(|(i, l)| (l.span.span_id, i)).collect();
    for (key, layer) in keys.iter().zip(&tree.model.layers) {
        let counts = quota.entry(key.clone()).or_default();
        for s in layer.launches.iter().chain(layer.kernels.iter().map(|k| &k.launch)) {
            if let Some(n) = counts.get_mut(&kernel_name(s)) {
                *n = n.saturating_sub(1);
            }
        }
    }

    let by_id: HashMap<u64, &Span> = ambiguous.spans.iter().map(|s| (s.span_id, s)).collect();
    let mut remaining = AmbiguityReport::default();
    for entry in ambiguity.entries {
        let span = by_id[&entry.span_id];
        let name = kernel_name(span);
        let fitting: Vec<usize> = entry
            .candidates
            .iter()
            .filter_map(|c| slot_by_span.get(c).copied())
            .filter(|&slot| quota.get(&keys[slot]).and_then(|q| q.get(&name)).is_some_and(|&n| n > 0))
            .collect();
        if span.level.rank() == 3 && fitting.len() == 1 {
            let slot = fitting[0];
            if let Some(n) = quota.get_mut(&keys[slot]).and_then(|q| q.get_mut(&name)) {
                *n -= 1;
            }
            let layer = &mut tree.model.layers[slot];
            match span.kind {
                SpanKind::Launch => layer.launches.push(span.clone()),
                _ => layer.kernels.push(KernelExec {
                    launch: span.clone(),
                    exec: span.clone(),
                    metrics: KernelMetrics::from_tags(&span.tags),
                }),
            }
        } else {
            remaining.entries.push(entry);
        }
    }
    for layer in &mut tree.model.layers {
        layer.launches.sort_by_key(Span::timeline_key);
    }
    let (tree, more) = correlate_async(tree, ambiguous)?;
    diagnostics.extend(more);
    Ok(Correlation { tree, ambiguity: remaining, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::span::testutil::{meta, span};
    use crate::span::{LevelSet, Tags};

    fn launch(id: u64, b: u64, e: u64, cid: u64) -> Span {
        let mut s = span(id, Level::Api, b, e);
        s.kind = SpanKind::Launch;
        s.correlation_id = Some(cid);
        s.name = "cudaLaunchKernel".into();
        s
    }

    fn exec(id: u64, name: &str, b: u64, e: u64, cid: u64, flops: i64) -> Span {
        let mut s = span(id, Level::Kernel, b, e);
        s.kind = SpanKind::Exec;
        s.correlation_id = Some(cid);
        s.name = name.into();
        s.tags = Tags::from([("flop_count_sp".to_string(), TagValue::Int(flops))]);
        s
    }

    #[test]
    fn chain_of_depth_three() {
        let b = TraceBundle::new(
            meta(LevelSet::full()),
            vec![span(1, Level::Model, 0, 100), span(2, Level::Layer, 10, 40), launch(3, 12, 13, 1)],
        );
        let c = assign_parents(&b).unwrap();
        assert!(c.ambiguity.is_empty());
        let pm = c.tree.parent_map();
        assert_eq!(pm[&2], 1);
        assert_eq!(pm[&3], 2);
    }

    #[test]
    fn overlapping_layers_are_ambiguous() {
        let b = TraceBundle::new(
            meta(LevelSet::full()),
            vec![
                span(1, Level::Model, 0, 100),
                span(2, Level::Layer, 10, 40),
                span(3, Level::Layer, 10, 40),
                launch(4, 12, 13, 1),
            ],
        );
        let c = assign_parents(&b).unwrap();
        assert_eq!(c.ambiguity.entries, vec![Ambiguity { span_id: 4, candidates: vec![2, 3] }]);
        assert!(demand_serialized_rerun(&c.ambiguity));
        assert!(c.tree.layers().iter().all(|l| l.launches.is_empty()));
    }

    #[test]
    fn explicit_parent_wins_over_ambiguity() {
        let mut l = launch(4, 12, 13, 1);
        l.parent_id = Some(3);
        let b = TraceBundle::new(
            meta(LevelSet::full()),
            vec![span(1, Level::Model, 0, 100), span(2, Level::Layer, 10, 40), span(3, Level::Layer, 10, 40), l],
        );
        let c = assign_parents(&b).unwrap();
        assert!(c.ambiguity.is_empty());
        assert_eq!(c.tree.parent_map()[&4], 3);
    }

    #[test]
    fn exact_endpoint_match_is_preferred() {
        let b = TraceBundle::new(
            meta(LevelSet::full()),
            vec![span(1, Level::Model, 0, 100), span(2, Level::Layer, 10, 40), span(3, Level::Layer, 12, 12), {
                let mut k = span(4, Level::Kernel, 12, 12);
                k.name = "zero".into();
                k
            }],
        );
        let c = assign_parents(&b).unwrap();
        assert!(c.ambiguity.is_empty());
        assert_eq!(c.tree.parent_map()[&4], 3);
    }

    #[test]
    fn error_cases() {
        let b = TraceBundle::new(meta(LevelSet::full()), vec![span(2, Level::Layer, 10, 40)]);
        assert_eq!(assign_parents(&b).unwrap_err(), CorrelateError::NoModelSpan);
        let b = TraceBundle::new(
            meta(LevelSet::new([Level::Model, Level::Kernel])),
            vec![span(1, Level::Model, 0, 100), span(2, Level::Kernel, 10, 40)],
        );
        assert_eq!(assign_parents(&b).unwrap_err(), CorrelateError::KernelWithoutLayer);
    }

    #[test]
    fn fuses_launch_with_exec() {
        let b = TraceBundle::new(
            meta(LevelSet::full()),
            vec![
                span(1, Level::Model, 0, 100),
                span(2, Level::Layer, 10, 40),
                span(3, Level::Layer, 40, 90),
                launch(4, 41, 42, 7),
                exec(5, "sgemm", 45, 60, 7, 100),
            ],
        );
        let c = correlate(&b).unwrap();
        assert!(c.diagnostics.is_empty());
        let layer = &c.tree.layers()[1];
        assert_eq!(layer.kernels.len(), 1);
        assert_eq!(layer.kernels[0].metrics.flop_count_sp, 100.0);
        assert_eq!(layer.kernels[0].latency_ns(), 15);
        assert_eq!(c.tree.parent_map()[&5], 3);
    }

    #[test]
    fn exec_outliving_its_layer_stays_with_launch_parent() {
        let b = TraceBundle::new(
            meta(LevelSet::full()),
            vec![
                span(1, Level::Model, 0, 100),
                span(2, Level::Layer, 10, 40),
                span(3, Level::Layer, 41, 90),
                launch(4, 38, 39, 7),
                exec(5, "slow", 39, 70, 7, 1),
            ],
        );
        let c = correlate(&b).unwrap();
        assert_eq!(c.tree.layers()[0].kernels.len(), 1);
        assert!(c.tree.layers()[1].kernels.is_empty());
    }

    #[test]
    fn orphans_are_reported() {
        let b = TraceBundle::new(
            meta(LevelSet::full()),
            vec![
                span(1, Level::Model, 0, 100),
                span(2, Level::Layer, 10, 40),
                launch(3, 12, 13, 1),
                exec(4, "k", 14, 20, 1, 0),
                exec(5, "memcpy", 50, 60, 99, 0),
                launch(6, 20, 21, 2),
            ],
        );
        let c = correlate(&b).unwrap();
        assert_eq!(c.tree.layers()[0].kernels.len(), 1);
        assert!(c.diagnostics.contains(&Diagnostic::UnmatchedExec { span_id: 5, correlation_id: 99 }));
        assert!(c.diagnostics.contains(&Diagnostic::UnmatchedLaunch { span_id: 6, correlation_id: 2 }));
    }

    #[test]
    fn duplicate_exec_correlation_is_an_error() {
        let b = TraceBundle::new(
            meta(LevelSet::full()),
            vec![
                span(1, Level::Model, 0, 100),
                span(2, Level::Layer, 10, 40),
                launch(3, 12, 13, 1),
                exec(4, "k", 14, 20, 1, 0),
                exec(5, "k", 21, 30, 1, 0),
            ],
        );
        assert_eq!(
            correlate(&b).unwrap_err(),
            CorrelateError::DuplicateCorrelationId { correlation_id: 1, kind: "exec", count: 2 }
        );
    }

    #[test]
    fn layer_tags_are_parsed() {
        let mut l = span(2, Level::Layer, 10, 40);
        l.name = "conv2d_48/Conv2D".into();
        l.tags.insert(TAG_ALLOC_BYTES.into(), TagValue::Int(1024));
        l.tags.insert(TAG_SHAPE.into(), "<256, 512, 7, 7>".into());
        let b = TraceBundle::new(meta(LevelSet::model_layer()), vec![span(1, Level::Model, 0, 100), l]);
        let c = assign_parents(&b).unwrap();
        let layer = &c.tree.layers()[0];
        assert_eq!(layer.layer_type, "Conv2D");
        assert_eq!(layer.alloc_bytes, 1024.0);
        assert_eq!(layer.shape.as_deref(), Some("<256, 512, 7, 7>"));
    }

    #[test]
    fn serialized_twin_resolves_overlap() {
        let named = |id, name: &str, b, e| {
            let mut s = span(id, Level::Layer, b, e);
            s.name = name.into();
            s
        };
        let overlapped = TraceBundle::new(
            meta(LevelSet::full()),
            vec![
                span(1, Level::Model, 0, 100),
                named(2, "a", 10, 40),
                named(3, "b", 10, 40),
                launch(4, 12, 13, 1),
                exec(5, "ka", 14, 20, 1, 0),
                launch(6, 13, 14, 2),
                exec(7, "kb", 20, 30, 2, 0),
            ],
        );
        let serialized = TraceBundle::new(
            meta(LevelSet::full()),
            vec![
                span(11, Level::Model, 0, 200),
                named(12, "a", 10, 40),
                named(13, "b", 50, 80),
                launch(14, 12, 13, 1),
                exec(15, "ka", 14, 20, 1, 0),
                launch(16, 52, 53, 2),
                exec(17, "kb", 54, 60, 2, 0),
            ],
        );
        assert_eq!(assign_parents(&overlapped).unwrap().ambiguity.len(), 2);
        let c = resolve_with_serialized(&overlapped, &serialized).unwrap();
        assert!(c.ambiguity.is_empty());
        let names: Vec<Vec<&str>> =
            c.tree.layers().iter().map(|l| l.kernels.iter().map(|k| k.name()).collect()).collect();
        assert_eq!(names, vec![vec!["ka"], vec!["kb"]]);
    }
}
