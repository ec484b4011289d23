//! Tracing-server side: JSONL wire format, ingestion, merging of per-tracer
//! streams into one timeline, and persistence.
//!
//! Wire format, one JSON object per line:
//!
//! ```text
//! {"rec":"meta","trace_id":1,"batch_size":8,"run_index":0,"levels":["model","layer"],
//!  "serialized":false,"system":{"name":"Tesla_V100","peak_flops":1.57e13,"mem_bw":9e11}}
//! {"rec":"span","trace_id":1,"span_id":2,"parent_id":null,"name":"predict","level":"model",
//!  "kind":"sync","begin_ns":0,"end_ns":100,"correlation_id":null,"tags":{}}
//! ```
//!
//! Unknown fields are ignored; `parent_id`, `correlation_id` and `tags` may
//! be omitted.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::span::{
    sort_timeline, validate_bundle, validate_meta, validate_spans, Level, LevelSet, RunMeta, Span, SpanKind,
    SystemSpec, Tags, TraceBundle, Violation,
};
use crate::tracer::{DeliveryError, SpanSink};

#[derive(Debug, Error)]
pub enum CollectorError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("stream has no meta record")]
    MissingMeta,
    #[error("line {line}: second meta record")]
    DuplicateMeta { line: usize },
    #[error("stream has no span records")]
    NoSpans,
    #[error("line {line}: trace_id {found} differs from run trace_id {expected}")]
    MixedTraceIds { line: usize, expected: u64, found: u64 },
    #[error("bundle rejected: {}", render_violations(.violations))]
    Invalid { violations: Vec<LocatedViolation> },
    #[error("cannot merge: run metadata differs ({0})")]
    ConflictingMeta(String),
    #[error("cannot merge: span_id {0} appears in more than one input")]
    DuplicateSpanId(u64),
    #[error("nothing to merge")]
    Empty,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// A validation violation with the input line of the offending span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocatedViolation {
    pub line: Option<usize>,
    pub violation: Violation,
}

fn render_violations(v: &[LocatedViolation]) -> String {
    v.iter()
        .map(|lv| match lv.line {
            Some(line) => format!("line {line}: {}", lv.violation),
            None => lv.violation.to_string(),
        })
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRecord {
    pub trace_id: u64,
    pub batch_size: u32,
    #[serde(default)]
    pub run_index: u32,
    pub levels: LevelSet,
    #[serde(default)]
    pub serialized: bool,
    pub system: SystemSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub trace_id: u64,
    pub span_id: u64,
    #[serde(default)]
    pub parent_id: Option<u64>,
    pub name: String,
    pub level: Level,
    pub kind: SpanKind,
    pub begin_ns: u64,
    pub end_ns: u64,
    #[serde(default)]
    pub correlation_id: Option<u64>,
    #[serde(default)]
    pub tags: Tags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rec", rename_all = "lowercase")]
pub enum Record {
    Meta(MetaRecord),
    Span(SpanRecord),
}

impl From<&RunMeta> for MetaRecord {
    fn from(m: &RunMeta) -> Self {
        MetaRecord {
            trace_id: m.trace_id,
            batch_size: m.batch_size,
            run_index: m.run_index,
            levels: m.profiling_levels.clone(),
            serialized: m.serialized,
            system: m.system.clone(),
        }
    }
}

impl From<MetaRecord> for RunMeta {
    fn from(r: MetaRecord) -> Self {
        RunMeta {
            trace_id: r.trace_id,
            profiling_levels: r.levels,
            batch_size: r.batch_size,
            run_index: r.run_index,
            system: r.system,
            serialized: r.serialized,
        }
    }
}

impl From<&Span> for SpanRecord {
    fn from(s: &Span) -> Self {
        SpanRecord {
            trace_id: s.trace_id,
            span_id: s.span_id,
            parent_id: s.parent_id,
            name: s.name.clone(),
            level: s.level,
            kind: s.kind,
            begin_ns: s.begin_ns,
            end_ns: s.end_ns,
            correlation_id: s.correlation_id,
            tags: s.tags.clone(),
        }
    }
}

impl From<SpanRecord> for Span {
    fn from(r: SpanRecord) -> Self {
        Span {
            span_id: r.span_id,
            trace_id: r.trace_id,
            parent_id: r.parent_id,
            name: r.name,
            level: r.level,
            kind: r.kind,
            begin_ns: r.begin_ns,
            end_ns: r.end_ns,
            correlation_id: r.correlation_id,
            tags: r.tags,
        }
    }
}

pub fn encode_meta(meta: &RunMeta) -> String {
    serde_json::to_string(&Record::Meta(meta.into())).expect("meta record serializes")
}

pub fn encode_span(span: &Span) -> String {
    serde_json::to_string(&Record::Span(span.into())).expect("span record serializes")
}

/// A parsed stream before whole-bundle validation, keeping the input line
/// of every span for diagnostics.
#[derive(Debug, Clone)]
pub struct ParsedStream {
    pub meta: RunMeta,
    pub spans: Vec<Span>,
    pub lines: HashMap<u64, usize>,
}

impl ParsedStream {
    fn locate(&self, violations: Vec<Violation>) -> Vec<LocatedViolation> {
        violations
            .into_iter()
            .map(|violation| LocatedViolation {
                line: violation.span_id.and_then(|id| self.lines.get(&id).copied()),
                violation,
            })
            .collect()
    }
}

/// Parses a JSONL stream: exactly one meta record and at least one span
/// record, all for one trace_id. Blank lines are skipped.
pub fn parse_stream<R: BufRead>(reader: R) -> Result<ParsedStream, CollectorError> {
    let mut meta: Option<(RunMeta, usize)> = None;
    let mut spans: Vec<(Span, usize)> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CollectorError::Malformed { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line)
            .map_err(|e| CollectorError::Malformed { line: line_no, message: e.to_string() })?;
        match record {
            Record::Meta(m) => {
                if meta.is_some() {
                    return Err(CollectorError::DuplicateMeta { line: line_no });
                }
                meta = Some((m.into(), line_no));
            }
            Record::Span(s) => spans.push((s.into(), line_no)),
        }
    }
    let (meta, _) = meta.ok_or(CollectorError::MissingMeta)?;
    if spans.is_empty() {
        return Err(CollectorError::NoSpans);
    }
    if let Some((s, line)) = spans.iter().find(|(s, _)| s.trace_id != meta.trace_id) {
        return Err(CollectorError::MixedTraceIds { line: *line, expected: meta.trace_id, found: s.trace_id });
    }
    let mut lines = HashMap::with_capacity(spans.len());
    for (s, line) in &spans {
        lines.entry(s.span_id).or_insert(*line);
    }
    let spans = sort_timeline(spans.into_iter().map(|(s, _)| s).collect());
    Ok(ParsedStream { meta, spans, lines })
}

/// Ingests the stream of one tracer. The result may lack the model span or
/// other levels; per-span rules are still enforced.
pub fn ingest_partial<R: BufRead>(reader: R) -> Result<TraceBundle, CollectorError> {
    let parsed = parse_stream(reader)?;
    let mut violations = validate_meta(&parsed.meta);
    violations.extend(validate_spans(&parsed.meta, &parsed.spans));
    if !violations.is_empty() {
        return Err(CollectorError::Invalid { violations: parsed.locate(violations) });
    }
    Ok(TraceBundle { meta: parsed.meta, spans: parsed.spans })
}

/// Ingests a complete run and returns a validated, sorted bundle.
pub fn ingest<R: BufRead>(reader: R) -> Result<TraceBundle, CollectorError> {
    let parsed = parse_stream(reader)?;
    let bundle = TraceBundle { meta: parsed.meta.clone(), spans: parsed.spans.clone() };
    let violations = validate_bundle(&bundle);
    if !violations.is_empty() {
        return Err(CollectorError::Invalid { violations: parsed.locate(violations) });
    }
    Ok(bundle)
}

fn describe_meta_conflict(a: &RunMeta, b: &RunMeta) -> String {
    let mut diffs = Vec::new();
    if a.trace_id != b.trace_id {
        diffs.push(format!("trace_id {} vs {}", a.trace_id, b.trace_id));
    }
    if a.batch_size != b.batch_size {
        diffs.push(format!("batch_size {} vs {}", a.batch_size, b.batch_size));
    }
    if a.run_index != b.run_index {
        diffs.push(format!("run_index {} vs {}", a.run_index, b.run_index));
    }
    if a.profiling_levels != b.profiling_levels {
        diffs.push(format!("levels {} vs {}", a.profiling_levels, b.profiling_levels));
    }
    if a.serialized != b.serialized {
        diffs.push("serialized flag".into());
    }
    if a.system != b.system {
        diffs.push(format!("system {} vs {}", a.system.name, b.system.name));
    }
    diffs.join(", ")
}

/// Unions the spans of several tracers' bundles for the same run into one
/// timeline. The result is not checked for whole-bundle invariants; use
/// [`validate_bundle`] when the merge should be complete.
pub fn merge<I>(bundles: I) -> Result<TraceBundle, CollectorError>
where
    I: IntoIterator<Item = TraceBundle>,
{
    let mut iter = bundles.into_iter();
    let first = iter.next().ok_or(CollectorError::Empty)?;
    let meta = first.meta;
    let mut seen: HashSet<u64> = HashSet::new();
    let mut spans = Vec::with_capacity(first.spans.len());
    let mut absorb = |list: Vec<Span>, spans: &mut Vec<Span>| -> Result<(), CollectorError> {
        let mut local: HashSet<u64> = HashSet::new();
        for s in &list {
            if !local.insert(s.span_id) {
                // intra-bundle duplicates are a validation matter, not a merge conflict
                continue;
            }
            if seen.contains(&s.span_id) {
                return Err(CollectorError::DuplicateSpanId(s.span_id));
            }
        }
        seen.extend(local);
        spans.extend(list);
        Ok(())
    };
    absorb(first.spans, &mut spans)?;
    for b in iter {
        if b.meta != meta {
            return Err(CollectorError::ConflictingMeta(describe_meta_conflict(&meta, &b.meta)));
        }
        absorb(b.spans, &mut spans)?;
    }
    Ok(TraceBundle { meta, spans: sort_timeline(spans) })
}

pub fn write_bundle<W: Write>(bundle: &TraceBundle, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", encode_meta(&bundle.meta))?;
    for s in &bundle.spans {
        writeln!(w, "{}", encode_span(s))?;
    }
    w.flush()
}

pub fn persist(bundle: &TraceBundle, path: &Path) -> Result<(), CollectorError> {
    let io = |source| CollectorError::Io { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(io)?;
    write_bundle(bundle, BufWriter::new(file)).map_err(io)
}

/// Loads and validates a persisted bundle.
pub fn load(path: &Path) -> Result<TraceBundle, CollectorError> {
    let file = File::open(path).map_err(|source| CollectorError::Io { path: path.to_path_buf(), source })?;
    ingest(BufReader::new(file))
}

/// Loads a single tracer's stream without whole-bundle checks.
pub fn load_partial(path: &Path) -> Result<TraceBundle, CollectorError> {
    let file = File::open(path).map_err(|source| CollectorError::Io { path: path.to_path_buf(), source })?;
    ingest_partial(BufReader::new(file))
}

/// Tracer sink that writes span records as JSONL. The meta record is
/// written once, before the first span.
pub struct JsonlSink<W: Write + Send> {
    writer: W,
    meta: Option<RunMeta>,
}

impl<W: Write + Send> JsonlSink<W> {
    pub fn new(writer: W, meta: RunMeta) -> Self {
        JsonlSink { writer, meta: Some(meta) }
    }

    pub fn into_inner(self) -> W {
        self.writer
    }
}

impl<W: Write + Send> SpanSink for JsonlSink<W> {
    fn deliver(&mut self, spans: &[Span]) -> Result<(), DeliveryError> {
        let err = |e: std::io::Error| DeliveryError(e.to_string());
        if let Some(meta) = &self.meta {
            writeln!(self.writer, "{}", encode_meta(meta)).map_err(err)?;
            self.meta = None;
        }
        for s in spans {
            writeln!(self.writer, "{}", encode_span(s)).map_err(err)?;
        }
        self.writer.flush().map_err(err)
    }
}

/// Key grouping repeated runs of one configuration.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RunGroupKey {
    pub batch_size: u32,
    pub levels: LevelSet,
}

/// Bundles from many runs grouped by `(batch_size, profiling_levels)`, all
/// on one system.
#[derive(Debug, Clone)]
pub struct RunSet {
    pub system: SystemSpec,
    pub groups: BTreeMap<RunGroupKey, Vec<TraceBundle>>,
}

impl RunSet {
    pub fn from_bundles(bundles: impl IntoIterator<Item = TraceBundle>) -> Result<Self, CollectorError> {
        let mut system: Option<SystemSpec> = None;
        let mut groups: BTreeMap<RunGroupKey, Vec<TraceBundle>> = BTreeMap::new();
        for b in bundles {
            match &system {
                None => system = Some(b.meta.system.clone()),
                Some(s) if *s != b.meta.system => {
                    return Err(CollectorError::ConflictingMeta(format!(
                        "system {} vs {}",
                        s.name, b.meta.system.name
                    )))
                }
                _ => {}
            }
            let key = RunGroupKey { batch_size: b.meta.batch_size, levels: b.meta.profiling_levels.clone() };
            groups.entry(key).or_default().push(b);
        }
        let system = system.ok_or(CollectorError::Empty)?;
        for runs in groups.values_mut() {
            runs.sort_by_key(|b| (b.meta.run_index, b.meta.trace_id));
        }
        Ok(RunSet { system, groups })
    }

    pub fn batch_sizes(&self) -> Vec<u32> {
        let mut sizes: Vec<u32> = self.groups.keys().map(|k| k.batch_size).collect();
        sizes.dedup();
        sizes
    }

    pub fn runs_for_batch(&self, batch_size: u32) -> impl Iterator<Item = &TraceBundle> {
        self.groups.iter().filter(move |(k, _)| k.batch_size == batch_size).flat_map(|(_, v)| v.iter())
    }
}
