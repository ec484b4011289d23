//! Span and trace data model shared by every stage of the pipeline.
//!
//! Timestamps are integer nanoseconds relative to a per-run epoch. Intervals
//! are closed, so a zero-duration span is legal and still nests.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Stack level a span was captured at.
///
/// `Api` marks host-side launch records (e.g. `cudaLaunchKernel`) and shares
/// the kernel rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Model,
    Layer,
    Kernel,
    Api,
}

impl Level {
    pub fn rank(self) -> u8 {
        match self {
            Level::Model => 1,
            Level::Layer => 2,
            Level::Kernel | Level::Api => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Model => "model",
            Level::Layer => "layer",
            Level::Kernel => "kernel",
            Level::Api => "api",
        }
    }

    /// One-letter code used in level-set labels (`M`, `L`, `G`).
    pub fn code(self) -> char {
        match self {
            Level::Model => 'M',
            Level::Layer => 'L',
            Level::Kernel => 'G',
            Level::Api => 'A',
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "model" | "m" => Ok(Level::Model),
            "layer" | "l" => Ok(Level::Layer),
            "kernel" | "gpu" | "g" => Ok(Level::Kernel),
            "api" => Ok(Level::Api),
            other => Err(format!("unknown level `{other}`")),
        }
    }
}

/// Set of profiling levels enabled for one run, e.g. `M/L/G`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LevelSet(BTreeSet<Level>);

impl LevelSet {
    pub fn new(levels: impl IntoIterator<Item = Level>) -> Self {
        LevelSet(levels.into_iter().collect())
    }

    pub fn model() -> Self {
        Self::new([Level::Model])
    }

    pub fn model_layer() -> Self {
        Self::new([Level::Model, Level::Layer])
    }

    pub fn full() -> Self {
        Self::new([Level::Model, Level::Layer, Level::Kernel])
    }

    pub fn contains(&self, level: Level) -> bool {
        match level {
            Level::Api => self.0.contains(&Level::Kernel),
            other => self.0.contains(&other),
        }
    }

    pub fn insert(&mut self, level: Level) {
        self.0.insert(level);
    }

    pub fn is_subset(&self, other: &LevelSet) -> bool {
        self.0.is_subset(&other.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Deepest enabled level (highest rank).
    pub fn deepest(&self) -> Option<Level> {
        self.0.iter().copied().max_by_key(|l| (l.rank(), *l))
    }

    pub fn iter(&self) -> impl Iterator<Item = Level> + '_ {
        self.0.iter().copied()
    }

    /// Parses labels such as `M/L/G`, `mlg`, or `model,layer`.
    pub fn parse(label: &str) -> Result<Self, String> {
        let label = label.trim();
        if label.contains([',', '/', '+']) {
            let levels = label
                .split([',', '/', '+'])
                .filter(|s| !s.is_empty())
                .map(str::parse)
                .collect::<Result<BTreeSet<Level>, _>>()?;
            return Ok(LevelSet(levels));
        }
        if let Ok(level) = label.parse::<Level>() {
            return Ok(LevelSet::new([level]));
        }
        label
            .chars()
            .map(|c| c.to_string().parse::<Level>())
            .collect::<Result<BTreeSet<Level>, _>>()
            .map(LevelSet)
    }
}

impl fmt::Display for LevelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let codes: Vec<String> = self.0.iter().map(|l| l.code().to_string()).collect();
        f.write_str(&codes.join("/"))
    }
}

impl FromIterator<Level> for LevelSet {
    fn from_iter<I: IntoIterator<Item = Level>>(iter: I) -> Self {
        LevelSet::new(iter)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanKind {
    Sync,
    Launch,
    Exec,
}

/// Scalar tag value. Integers and floats stay distinct through the wire
/// format so that a float tag round-trips bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TagValue {
    Int(i64),
    Float(f64),
    Text(String),
}

impl TagValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            TagValue::Int(v) => Some(*v as f64),
            TagValue::Float(v) => Some(*v),
            TagValue::Text(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            TagValue::Text(s) => Some(s),
            _ => None,
        }
    }
}

impl From<&str> for TagValue {
    fn from(v: &str) -> Self {
        TagValue::Text(v.to_owned())
    }
}

impl From<String> for TagValue {
    fn from(v: String) -> Self {
        TagValue::Text(v)
    }
}

impl From<i64> for TagValue {
    fn from(v: i64) -> Self {
        TagValue::Int(v)
    }
}

impl From<f64> for TagValue {
    fn from(v: f64) -> Self {
        TagValue::Float(v)
    }
}

pub type Tags = BTreeMap<String, TagValue>;

pub const TAG_FLOP_COUNT_SP: &str = "flop_count_sp";
pub const TAG_DRAM_READ_BYTES: &str = "dram_read_bytes";
pub const TAG_DRAM_WRITE_BYTES: &str = "dram_write_bytes";
pub const TAG_ACHIEVED_OCCUPANCY: &str = "achieved_occupancy";
pub const TAG_LAYER_TYPE: &str = "layer_type";
pub const TAG_ALLOC_BYTES: &str = "alloc_bytes";
pub const TAG_SHAPE: &str = "shape";

/// One timed event at one stack level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub span_id: u64,
    pub trace_id: u64,
    pub parent_id: Option<u64>,
    pub name: String,
    pub level: Level,
    pub kind: SpanKind,
    pub begin_ns: u64,
    pub end_ns: u64,
    pub correlation_id: Option<u64>,
    pub tags: Tags,
}

impl Span {
    pub fn duration_ns(&self) -> u64 {
        self.end_ns.saturating_sub(self.begin_ns)
    }

    /// Closed-interval containment; every interval contains itself.
    pub fn contains(&self, other: &Span) -> bool {
        self.begin_ns <= other.begin_ns && other.end_ns <= self.end_ns
    }

    pub fn tag(&self, key: &str) -> Option<&TagValue> {
        self.tags.get(key)
    }

    /// Timeline ordering key: `(begin_ns, rank(level), span_id)`.
    pub fn timeline_key(&self) -> (u64, u8, u64) {
        (self.begin_ns, self.level.rank(), self.span_id)
    }
}

/// Hardware counters attached to an execution span.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KernelMetrics {
    pub flop_count_sp: f64,
    pub dram_read_bytes: f64,
    pub dram_write_bytes: f64,
    /// Fraction in `[0, 1]`.
    pub achieved_occupancy: f64,
}

impl KernelMetrics {
    /// Reads metrics from span tags; absent keys read as zero.
    pub fn from_tags(tags: &Tags) -> Self {
        let get = |k: &str| tags.get(k).and_then(TagValue::as_f64).unwrap_or(0.0);
        KernelMetrics {
            flop_count_sp: get(TAG_FLOP_COUNT_SP),
            dram_read_bytes: get(TAG_DRAM_READ_BYTES),
            dram_write_bytes: get(TAG_DRAM_WRITE_BYTES),
            achieved_occupancy: get(TAG_ACHIEVED_OCCUPANCY),
        }
    }

    /// Writes the metrics as tags. Whole-number counts are written as
    /// integers.
    pub fn write_tags(&self, tags: &mut Tags) {
        let count = |v: f64| {
            if v.fract() == 0.0 && v.abs() < 9.0e15 {
                TagValue::Int(v as i64)
            } else {
                TagValue::Float(v)
            }
        };
        tags.insert(TAG_FLOP_COUNT_SP.into(), count(self.flop_count_sp));
        tags.insert(TAG_DRAM_READ_BYTES.into(), count(self.dram_read_bytes));
        tags.insert(TAG_DRAM_WRITE_BYTES.into(), count(self.dram_write_bytes));
        tags.insert(TAG_ACHIEVED_OCCUPANCY.into(), TagValue::Float(self.achieved_occupancy));
    }

    pub fn is_valid(&self) -> bool {
        self.flop_count_sp >= 0.0
            && self.dram_read_bytes >= 0.0
            && self.dram_write_bytes >= 0.0
            && (0.0..=1.0).contains(&self.achieved_occupancy)
    }

    pub fn total_bytes(&self) -> f64 {
        self.dram_read_bytes + self.dram_write_bytes
    }
}

/// Peak compute and memory bandwidth of a system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub name: String,
    /// Floating-point operations per second.
    pub peak_flops: f64,
    /// Bytes per second (decimal GB/s × 1e9).
    #[serde(rename = "mem_bw")]
    pub memory_bandwidth_bytes_per_s: f64,
}

impl SystemSpec {
    pub fn new(name: impl Into<String>, peak_flops: f64, memory_bandwidth_bytes_per_s: f64) -> Self {
        SystemSpec { name: name.into(), peak_flops, memory_bandwidth_bytes_per_s }
    }

    pub fn is_valid(&self) -> bool {
        self.peak_flops > 0.0
            && self.memory_bandwidth_bytes_per_s > 0.0
            && self.peak_flops.is_finite()
            && self.memory_bandwidth_bytes_per_s.is_finite()
    }

    pub fn quadro_rtx() -> Self {
        Self::new("Quadro_RTX", 16.3e12, 624e9)
    }

    pub fn tesla_v100() -> Self {
        Self::new("Tesla_V100", 15.7e12, 900e9)
    }

    pub fn tesla_p100() -> Self {
        Self::new("Tesla_P100", 9.3e12, 732e9)
    }

    pub fn tesla_p4() -> Self {
        Self::new("Tesla_P4", 5.5e12, 192e9)
    }

    pub fn tesla_m60() -> Self {
        Self::new("Tesla_M60", 4.8e12, 160e9)
    }

    /// The five reference GPU systems.
    pub fn presets() -> Vec<SystemSpec> {
        vec![
            Self::quadro_rtx(),
            Self::tesla_v100(),
            Self::tesla_p100(),
            Self::tesla_p4(),
            Self::tesla_m60(),
        ]
    }

    pub fn preset(name: &str) -> Option<SystemSpec> {
        let wanted = name.to_ascii_lowercase().replace(['-', ' '], "_");
        Self::presets().into_iter().find(|s| {
            let n = s.name.to_ascii_lowercase();
            n == wanted || n.trim_start_matches("tesla_") == wanted.trim_start_matches("tesla_")
        })
    }
}

/// Metadata for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub trace_id: u64,
    pub profiling_levels: LevelSet,
    pub batch_size: u32,
    pub run_index: u32,
    pub system: SystemSpec,
    /// The run was captured with parallel events serialized.
    pub serialized: bool,
}

/// All spans of one run, sorted by timeline order.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceBundle {
    pub meta: RunMeta,
    pub spans: Vec<Span>,
}

impl TraceBundle {
    /// Wraps spans, sorting them into timeline order.
    pub fn new(meta: RunMeta, spans: Vec<Span>) -> Self {
        TraceBundle { meta, spans: sort_timeline(spans) }
    }

    pub fn span(&self, span_id: u64) -> Option<&Span> {
        self.spans.iter().find(|s| s.span_id == span_id)
    }

    /// The model-prediction span, if exactly one exists.
    pub fn model_span(&self) -> Option<&Span> {
        let mut it = self.spans.iter().filter(|s| s.level == Level::Model && s.kind == SpanKind::Sync);
        match (it.next(), it.next()) {
            (Some(s), None) => Some(s),
            _ => None,
        }
    }
}

/// Sorts spans by `(begin_ns, rank(level), span_id)`; stable for equal keys.
pub fn sort_timeline(mut spans: Vec<Span>) -> Vec<Span> {
    spans.sort_by(timeline_cmp);
    spans
}

pub fn timeline_cmp(a: &Span, b: &Span) -> Ordering {
    a.timeline_key().cmp(&b.timeline_key())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rule {
    NegativeDuration,
    DuplicateSpanId,
    MissingCorrelationId,
    UnexpectedCorrelationId,
    TraceIdMismatch,
    ModelSpanCount(usize),
    OutOfOrder,
    InvalidMetrics,
    NonFiniteTag(String),
    LevelNotProfiled(Level),
    MetaMissingModelLevel,
    ZeroBatchSize,
    InvalidSystem,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::NegativeDuration => f.write_str("negative duration"),
            Rule::DuplicateSpanId => f.write_str("duplicate span_id"),
            Rule::MissingCorrelationId => f.write_str("launch/exec span without correlation_id"),
            Rule::UnexpectedCorrelationId => f.write_str("sync span carries a correlation_id"),
            Rule::TraceIdMismatch => f.write_str("trace_id differs from run meta"),
            Rule::ModelSpanCount(n) => write!(f, "expected exactly one model span, found {n}"),
            Rule::OutOfOrder => f.write_str("span out of timeline order"),
            Rule::InvalidMetrics => f.write_str("kernel metrics out of range"),
            Rule::NonFiniteTag(k) => write!(f, "non-finite float in tag `{k}`"),
            Rule::LevelNotProfiled(l) => write!(f, "span at level `{l}` which the run did not profile"),
            Rule::MetaMissingModelLevel => f.write_str("profiling levels do not include model"),
            Rule::ZeroBatchSize => f.write_str("batch size must be positive"),
            Rule::InvalidSystem => f.write_str("system peak flops and bandwidth must be positive"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub span_id: Option<u64>,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.span_id {
            Some(id) => write!(f, "span {id}: {}", self.rule),
            None => write!(f, "bundle: {}", self.rule),
        }
    }
}

/// Checks the per-span rules only: durations, id uniqueness, correlation
/// ids, trace ids, metric ranges and tag finiteness.
pub fn validate_spans(meta: &RunMeta, spans: &[Span]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen: HashMap<u64, usize> = HashMap::with_capacity(spans.len());
    for span in spans {
        let v = |rule| Violation { span_id: Some(span.span_id), rule };
        if span.end_ns < span.begin_ns {
            out.push(v(Rule::NegativeDuration));
        }
        let n = seen.entry(span.span_id).or_insert(0);
        *n += 1;
        if *n == 2 {
            out.push(v(Rule::DuplicateSpanId));
        }
        match (span.kind, span.correlation_id) {
            (SpanKind::Sync, Some(_)) => out.push(v(Rule::UnexpectedCorrelationId)),
            (SpanKind::Launch | SpanKind::Exec, None) => out.push(v(Rule::MissingCorrelationId)),
            _ => {}
        }
        if span.trace_id != meta.trace_id {
            out.push(v(Rule::TraceIdMismatch));
        }
        if !meta.profiling_levels.contains(span.level) {
            out.push(v(Rule::LevelNotProfiled(span.level)));
        }
        for (key, value) in &span.tags {
            if let TagValue::Float(x) = value {
                if !x.is_finite() {
                    out.push(v(Rule::NonFiniteTag(key.clone())));
                }
            }
        }
        if span.kind == SpanKind::Exec && !KernelMetrics::from_tags(&span.tags).is_valid() {
            out.push(v(Rule::InvalidMetrics));
        }
    }
    out
}

pub fn validate_meta(meta: &RunMeta) -> Vec<Violation> {
    let mut out = Vec::new();
    let v = |rule| Violation { span_id: None, rule };
    if !meta.profiling_levels.contains(Level::Model) {
        out.push(v(Rule::MetaMissingModelLevel));
    }
    if meta.batch_size == 0 {
        out.push(v(Rule::ZeroBatchSize));
    }
    if !meta.system.is_valid() {
        out.push(v(Rule::InvalidSystem));
    }
    out
}

/// Returns every invariant violation in the bundle; empty means well formed.
pub fn validate_bundle(bundle: &TraceBundle) -> Vec<Violation> {
    let mut out = validate_meta(&bundle.meta);
    out.extend(validate_spans(&bundle.meta, &bundle.spans));
    let models = bundle
        .spans
        .iter()
        .filter(|s| s.level == Level::Model && s.kind == SpanKind::Sync)
        .count();
    if models != 1 {
        out.push(Violation { span_id: None, rule: Rule::ModelSpanCount(models) });
    }
    for pair in bundle.spans.windows(2) {
        if timeline_cmp(&pair[0], &pair[1]) == Ordering::Greater {
            out.push(Violation { span_id: Some(pair[1].span_id), rule: Rule::OutOfOrder });
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    pub fn meta(levels: LevelSet) -> RunMeta {
        RunMeta {
            trace_id: 1,
            profiling_levels: levels,
            batch_size: 1,
            run_index: 0,
            system: SystemSpec::tesla_v100(),
            serialized: false,
        }
    }

    pub fn span(id: u64, level: Level, begin: u64, end: u64) -> Span {
        Span {
            span_id: id,
            trace_id: 1,
            parent_id: None,
            name: format!("s{id}"),
            level,
            kind: SpanKind::Sync,
            begin_ns: begin,
            end_ns: end,
            correlation_id: None,
            tags: Tags::new(),
        }
    }
}
