//! Leveled experimentation.
//!
//! The same workload is run with profilers enabled up to increasing levels
//! (`M`, `M/L`, `M/L/G`). The overhead a level adds to an event is the
//! event's latency with that level enabled minus its latency without it,
//! and an event's accurate latency comes from the run whose deepest level
//! is the event's own.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::analysis::{trimmed_mean_ns, AnalysisError};
use crate::correlate::EntityTree;
use crate::span::{Level, LevelSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LeveledError {
    #[error("need runs at two or more level sets, found {0}")]
    TooFewLevelSets(usize),
    #[error("level sets {0} and {1} do not form a chain")]
    NotAChain(LevelSet, LevelSet),
    #[error("runs describe different workloads: {0}")]
    MixedWorkload(String),
    #[error("no run has {0} as its deepest level")]
    NoQualifyingRun(Level),
    #[error("event {0} not found in the qualifying runs")]
    UnknownEvent(EventKey),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

/// Structural identity of an event across runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(tag = "level", rename_all = "lowercase")]
pub enum EventKey {
    Model,
    Layer { layer_index: usize },
    Kernel { layer_index: usize, ordinal: usize },
}

impl EventKey {
    pub fn level(self) -> Level {
        match self {
            EventKey::Model => Level::Model,
            EventKey::Layer { .. } => Level::Layer,
            EventKey::Kernel { .. } => Level::Kernel,
        }
    }

    fn latency_in(self, tree: &EntityTree) -> Option<u64> {
        match self {
            EventKey::Model => Some(tree.model_latency_ns()),
            EventKey::Layer { layer_index } => tree.layers().get(layer_index).map(|l| l.latency_ns()),
            EventKey::Kernel { layer_index, ordinal } => {
                tree.layers().get(layer_index)?.kernels.get(ordinal).map(|k| k.latency_ns())
            }
        }
    }
}

impl std::fmt::Display for EventKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EventKey::Model => f.write_str("model"),
            EventKey::Layer { layer_index } => write!(f, "layer {layer_index}"),
            EventKey::Kernel { layer_index, ordinal } => write!(f, "kernel {layer_index}.{ordinal}"),
        }
    }
}

/// Runs of one workload keyed by their profiling-level set.
#[derive(Debug, Clone, Default)]
pub struct LeveledRunGroup {
    runs: BTreeMap<LevelSet, Vec<EntityTree>>,
}

impl LeveledRunGroup {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a run. Runs must share batch size and system.
    pub fn insert(&mut self, tree: EntityTree) -> Result<(), LeveledError> {
        if let Some(other) = self.runs.values().flatten().next() {
            if other.meta.batch_size != tree.meta.batch_size {
                return Err(LeveledError::MixedWorkload(format!(
                    "batch sizes {} and {}",
                    other.meta.batch_size, tree.meta.batch_size
                )));
            }
            if other.meta.system != tree.meta.system {
                return Err(LeveledError::MixedWorkload(format!(
                    "systems {} and {}",
                    other.meta.system.name, tree.meta.system.name
                )));
            }
        }
        self.runs.entry(tree.meta.profiling_levels.clone()).or_default().push(tree);
        Ok(())
    }

    pub fn from_trees(trees: impl IntoIterator<Item = EntityTree>) -> Result<Self, LeveledError> {
        let mut g = Self::new();
        for t in trees {
            g.insert(t)?;
        }
        Ok(g)
    }

    pub fn level_sets(&self) -> impl Iterator<Item = &LevelSet> {
        self.runs.keys()
    }

    pub fn runs(&self, levels: &LevelSet) -> &[EntityTree] {
        self.runs.get(levels).map(Vec::as_slice).unwrap_or_default()
    }

    /// Level sets ordered by inclusion.
    pub fn chain(&self) -> Result<Vec<&LevelSet>, LeveledError> {
        let mut sets: Vec<&LevelSet> = self.runs.keys().collect();
        sets.sort_by_key(|s| s.len());
        for w in sets.windows(2) {
            if w[0].len() == w[1].len() || !w[0].is_subset(w[1]) {
                return Err(LeveledError::NotAChain(w[0].clone(), w[1].clone()));
            }
        }
        Ok(sets)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OverheadFlag {
    /// Small negative value treated as noise and reported as zero.
    Clamped,
    /// Negative beyond the noise tolerance; reported as measured.
    ExceedsTolerance,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelOverhead {
    pub from: LevelSet,
    pub to: LevelSet,
    /// Deepest level of `to`.
    pub added: Level,
    pub overhead_ns: f64,
    pub flag: Option<OverheadFlag>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventOverhead {
    pub event: EventKey,
    pub name: String,
    /// Latency from the run whose deepest level is the event's level.
    pub accurate_latency_ns: Option<f64>,
    /// Trimmed-mean latency per level set that captured the event.
    pub latencies: Vec<(LevelSet, f64)>,
    /// Overhead introduced by each successive level.
    pub overheads: Vec<LevelOverhead>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnmatchedEvent {
    pub event: EventKey,
    pub levels: LevelSet,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadReport {
    pub batch_size: u32,
    pub chain: Vec<LevelSet>,
    pub events: Vec<EventOverhead>,
    /// Overhead on the model prediction latency per added level.
    pub level_totals: Vec<LevelOverhead>,
    /// Model latency at the deepest set minus the shallowest.
    pub combined_overhead_ns: f64,
    pub unmatched: Vec<UnmatchedEvent>,
    /// Relative tolerance under which negative overheads are clamped.
    pub noise_tolerance: f64,
}

impl OverheadReport {
    pub fn event(&self, key: EventKey) -> Option<&EventOverhead> {
        self.events.iter().find(|e| e.event == key)
    }

    /// Overhead introduced to `key` by adding `level`.
    pub fn overhead(&self, key: EventKey, level: Level) -> Option<f64> {
        self.event(key)?.overheads.iter().find(|o| o.added == level).map(|o| o.overhead_ns)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverheadConfig {
    pub trim_fraction: f64,
    pub noise_tolerance: f64,
}

impl Default for OverheadConfig {
    fn default() -> Self {
        OverheadConfig { trim_fraction: 0.2, noise_tolerance: 0.01 }
    }
}

fn event_latency(runs: &[EntityTree], key: EventKey, trim: f64) -> Result<Option<f64>, LeveledError> {
    let lat: Option<Vec<u64>> = runs.iter().map(|t| key.latency_in(t)).collect();
    match lat {
        Some(v) if !v.is_empty() => Ok(Some(trimmed_mean_ns(&v, trim)?)),
        _ => Ok(None),
    }
}

fn step(from: &LevelSet, to: &LevelSet, before: f64, after: f64, tolerance: f64) -> LevelOverhead {
    let raw = after - before;
    let (overhead_ns, flag) = if raw >= 0.0 {
        (raw, None)
    } else if -raw <= tolerance * before {
        (0.0, Some(OverheadFlag::Clamped))
    } else {
        (raw, Some(OverheadFlag::ExceedsTolerance))
    };
    LevelOverhead {
        from: from.clone(),
        to: to.clone(),
        added: to.deepest().unwrap_or(Level::Model),
        overhead_ns,
        flag,
    }
}

/// Overhead of each added level on the model and on every layer.
pub fn compute_overhead(group: &LeveledRunGroup, config: &OverheadConfig) -> Result<OverheadReport, LeveledError> {
    let chain = group.chain()?;
    if chain.len() < 2 {
        return Err(LeveledError::TooFewLevelSets(chain.len()));
    }
    let trim = config.trim_fraction;
    let batch_size = group.runs.values().flatten().next().map(|t| t.meta.batch_size).unwrap_or_default();

    let layer_count = chain
        .iter()
        .filter(|s| s.contains(Level::Layer))
        .flat_map(|s| group.runs(s))
        .map(|t| t.layers().len())
        .max()
        .unwrap_or(0);
    let mut keys = vec![EventKey::Model];
    keys.extend((0..layer_count).map(|layer_index| EventKey::Layer { layer_index }));

    let mut events = Vec::new();
    let mut unmatched = Vec::new();
    for key in keys {
        let mut latencies = Vec::new();
        for set in chain.iter().filter(|s| s.contains(key.level())) {
            match event_latency(group.runs(set), key, trim)? {
                Some(l) => latencies.push(((*set).clone(), l)),
                None => unmatched.push(UnmatchedEvent { event: key, levels: (*set).clone() }),
            }
        }
        let overheads = latencies
            .windows(2)
            .map(|w| step(&w[0].0, &w[1].0, w[0].1, w[1].1, config.noise_tolerance))
            .collect();
        let accurate_latency_ns =
            latencies.iter().find(|(s, _)| s.deepest() == Some(key.level())).map(|(_, l)| *l);
        events.push(EventOverhead { event: key, name: event_name(group, key), accurate_latency_ns, latencies, overheads });
    }

    let model = &events[0];
    let combined_overhead_ns = match (model.latencies.first(), model.latencies.last()) {
        (Some(a), Some(b)) => b.1 - a.1,
        _ => 0.0,
    };
    Ok(OverheadReport {
        batch_size,
        chain: chain.into_iter().cloned().collect(),
        level_totals: model.overheads.clone(),
        combined_overhead_ns,
        events,
        unmatched,
        noise_tolerance: config.noise_tolerance,
    })
}

fn event_name(group: &LeveledRunGroup, key: EventKey) -> String {
    let tree = group.runs.values().flatten().find(|t| key.latency_in(t).is_some());
    match (key, tree) {
        (EventKey::Model, Some(t)) => t.model.span.name.clone(),
        (EventKey::Layer { layer_index }, Some(t)) => t.layers()[layer_index].name().to_owned(),
        (EventKey::Kernel { layer_index, ordinal }, Some(t)) => {
            t.layers()[layer_index].kernels[ordinal].name().to_owned()
        }
        (_, None) => String::new(),
    }
}

/// Latency of `key` from the runs whose deepest level is the event's
/// level, reduced by trimmed mean.
pub fn accurate_latency(group: &LeveledRunGroup, key: EventKey, trim: f64) -> Result<f64, LeveledError> {
    let level = key.level();
    let set = group
        .runs
        .keys()
        .filter(|s| s.deepest() == Some(level))
        .min_by_key(|s| s.len())
        .ok_or(LeveledError::NoQualifyingRun(level))?;
    event_latency(group.runs(set), key, trim)?.ok_or(LeveledError::UnknownEvent(key))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlate::{LayerExec, ModelRun};
    use crate::span::testutil::{meta, span};

    fn tree(levels: LevelSet, model_ns: u64, layers: &[u64]) -> EntityTree {
        let mut cursor = 0;
        let layers = layers
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let s = span(10 + i as u64, Level::Layer, cursor, cursor + d);
                cursor += d;
                LayerExec {
                    span: s,
                    layer_index: i,
                    layer_type: "Conv2D".into(),
                    alloc_bytes: 0.0,
                    shape: None,
                    launches: vec![],
                    kernels: vec![],
                }
            })
            .collect();
        EntityTree { meta: meta(levels), model: ModelRun { span: span(1, Level::Model, 0, model_ns), layers } }
    }

    #[test]
    fn model_overheads_follow_the_chain() {
        let g = LeveledRunGroup::from_trees([
            tree(LevelSet::full(), 490_300_000, &[100, 200]),
            tree(LevelSet::model(), 275_100_000, &[]),
            tree(LevelSet::model_layer(), 432_100_000, &[60, 200]),
        ])
        .unwrap();
        let r = compute_overhead(&g, &OverheadConfig::default()).unwrap();
        assert_eq!(r.overhead(EventKey::Model, Level::Layer), Some(157_000_000.0));
        assert_eq!(r.overhead(EventKey::Model, Level::Kernel), Some(58_200_000.0));
        assert_eq!(r.combined_overhead_ns, 215_200_000.0);
        assert_eq!(r.overhead(EventKey::Layer { layer_index: 0 }, Level::Kernel), Some(40.0));
        assert_eq!(r.event(EventKey::Model).unwrap().accurate_latency_ns, Some(275_100_000.0));
        assert_eq!(r.event(EventKey::Layer { layer_index: 1 }).unwrap().accurate_latency_ns, Some(200.0));
        assert_eq!(accurate_latency(&g, EventKey::Model, 0.2).unwrap(), 275_100_000.0);
        assert_eq!(accurate_latency(&g, EventKey::Layer { layer_index: 0 }, 0.2).unwrap(), 60.0);
    }

    #[test]
    fn negative_noise_is_clamped() {
        let g = LeveledRunGroup::from_trees([
            tree(LevelSet::model(), 1000, &[]),
            tree(LevelSet::model_layer(), 995, &[995]),
            tree(LevelSet::full(), 900, &[900]),
        ])
        .unwrap();
        let r = compute_overhead(&g, &OverheadConfig::default()).unwrap();
        assert_eq!(r.level_totals[0].overhead_ns, 0.0);
        assert_eq!(r.level_totals[0].flag, Some(OverheadFlag::Clamped));
        assert_eq!(r.level_totals[1].overhead_ns, -95.0);
        assert_eq!(r.level_totals[1].flag, Some(OverheadFlag::ExceedsTolerance));
    }

    #[test]
    fn errors() {
        let g = LeveledRunGroup::from_trees([tree(LevelSet::model(), 10, &[])]).unwrap();
        assert_eq!(compute_overhead(&g, &OverheadConfig::default()).unwrap_err(), LeveledError::TooFewLevelSets(1));
        assert_eq!(
            accurate_latency(&g, EventKey::Layer { layer_index: 0 }, 0.2).unwrap_err(),
            LeveledError::NoQualifyingRun(Level::Layer)
        );
        let g = LeveledRunGroup::from_trees([
            tree(LevelSet::model_layer(), 10, &[1]),
            tree(LevelSet::new([Level::Model, Level::Kernel]), 10, &[]),
        ])
        .unwrap();
        assert!(matches!(compute_overhead(&g, &OverheadConfig::default()), Err(LeveledError::NotAChain(..))));
        let mut other = tree(LevelSet::full(), 1, &[]);
        other.meta.batch_size = 2;
        let mut g = LeveledRunGroup::from_trees([tree(LevelSet::model(), 1, &[])]).unwrap();
        assert!(matches!(g.insert(other), Err(LeveledError::MixedWorkload(_))));
    }

    #[test]
    fn missing_layers_are_unmatched() {
        let g = LeveledRunGroup::from_trees([
            tree(LevelSet::model(), 10, &[]),
            tree(LevelSet::model_layer(), 20, &[1, 2]),
            tree(LevelSet::full(), 30, &[1]),
        ])
        .unwrap();
        let r = compute_overhead(&g, &OverheadConfig::default()).unwrap();
        assert_eq!(r.unmatched, vec![UnmatchedEvent { event: EventKey::Layer { layer_index: 1 }, levels: LevelSet::full() }]);
    }

    #[test]
    fn supply_order_does_not_matter() {
        let runs = [
            tree(LevelSet::model(), 10, &[]),
            tree(LevelSet::model(), 12, &[]),
            tree(LevelSet::model_layer(), 20, &[5, 6]),
            tree(LevelSet::full(), 31, &[7, 6]),
        ];
        let a = compute_overhead(&LeveledRunGroup::from_trees(runs.clone()).unwrap(), &OverheadConfig::default());
        let mut rev = runs.to_vec();
        rev.reverse();
        let b = compute_overhead(&LeveledRunGroup::from_trees(rev).unwrap(), &OverheadConfig::default());
        assert_eq!(a, b);
    }
}
