//! Tracer SDK.
//!
//! Instrumented code opens and closes spans with [`Tracer::start_span`] and
//! [`Tracer::finish_span`]; asynchronous operations are recorded as a
//! launch/execution pair with [`Tracer::record_async_pair`]. Finished spans
//! go into an in-memory buffer and are handed to a [`SpanSink`] only on
//! [`Tracer::flush`] (or inline, when the buffer fills up), so the measured
//! code path never waits on collector I/O.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::clock::Clock;
use crate::span::{Level, LevelSet, Span, SpanKind, Tags};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("span delivery failed: {0}")]
pub struct DeliveryError(pub String);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TracerError {
    #[error("span {span_id} was already finished")]
    DoubleFinish { span_id: u64 },
    #[error("launch correlation id {launch} does not match exec correlation id {exec}")]
    CorrelationMismatch { launch: u64, exec: u64 },
    #[error("span `{name}` ends before it begins")]
    InvalidInterval { name: String },
    #[error("execution span `{name}` must not carry a parent; it inherits the launch span's parent")]
    ExecWithParent { name: String },
    #[error("{source}; {retained} spans retained for retry")]
    Delivery { source: DeliveryError, retained: usize },
}

/// Destination for finished spans: an in-process collector or a wire
/// encoder.
pub trait SpanSink: Send {
    fn deliver(&mut self, spans: &[Span]) -> Result<(), DeliveryError>;
}

/// Sink collecting spans in memory. Clones share storage.
#[derive(Debug, Clone, Default)]
pub struct MemorySink {
    spans: Arc<Mutex<Vec<Span>>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn spans(&self) -> Vec<Span> {
        self.spans.lock().unwrap().clone()
    }

    pub fn take(&self) -> Vec<Span> {
        std::mem::take(&mut *self.spans.lock().unwrap())
    }

    pub fn len(&self) -> usize {
        self.spans.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SpanSink for MemorySink {
    fn deliver(&mut self, spans: &[Span]) -> Result<(), DeliveryError> {
        self.spans.lock().unwrap().extend_from_slice(spans);
        Ok(())
    }
}

/// Contention-free span id source, shareable between the tracers of one run.
#[derive(Debug, Clone)]
pub struct IdGenerator {
    next: Arc<AtomicU64>,
}

impl IdGenerator {
    pub fn starting_at(first: u64) -> Self {
        IdGenerator { next: Arc::new(AtomicU64::new(first.max(1))) }
    }

    /// Ids start at a seed-derived base, leaving room for 2^32 spans.
    pub fn seeded(seed: u64) -> Self {
        let base = ChaCha8Rng::seed_from_u64(seed).next_u64() >> 32;
        Self::starting_at((base << 31) | 1)
    }

    pub fn next_id(&self) -> u64 {
        self.next.fetch_add(1, Ordering::Relaxed)
    }
}

#[derive(Debug, Clone)]
pub struct TracerConfig {
    pub enabled_levels: LevelSet,
    /// Finished spans buffered before an inline flush; at least 1.
    pub buffer_capacity: usize,
}

impl TracerConfig {
    pub fn new(enabled_levels: LevelSet) -> Self {
        TracerConfig { enabled_levels, buffer_capacity: 4096 }
    }

    pub fn with_capacity(mut self, capacity: usize) -> Self {
        self.buffer_capacity = capacity.max(1);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum HandleState {
    Open,
    Inert,
    Closed,
}

/// An open span. Finish it exactly once.
#[derive(Debug)]
pub struct SpanHandle {
    span_id: u64,
    trace_id: u64,
    level: Level,
    begin_ns: u64,
    parent_id: Option<u64>,
    name: String,
    tags: Tags,
    state: HandleState,
}

impl SpanHandle {
    pub fn span_id(&self) -> Option<u64> {
        (self.state != HandleState::Inert).then_some(self.span_id)
    }

    pub fn trace_id(&self) -> u64 {
        self.trace_id
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn begin_ns(&self) -> u64 {
        self.begin_ns
    }

    pub fn is_open(&self) -> bool {
        self.state == HandleState::Open
    }

    /// A handle for a disabled level; finishing it publishes nothing.
    pub fn is_inert(&self) -> bool {
        self.state == HandleState::Inert
    }

    pub fn set_tag(&mut self, key: impl Into<String>, value: impl Into<crate::span::TagValue>) {
        self.tags.insert(key.into(), value.into());
    }
}

/// Span fields for one half of an asynchronous launch/execution pair. The
/// timestamps come from the capturing profiler, not from the tracer clock.
#[derive(Debug, Clone)]
pub struct PendingSpan {
    pub name: String,
    pub level: Level,
    pub begin_ns: u64,
    pub end_ns: u64,
    pub parent_id: Option<u64>,
    pub correlation_id: u64,
    pub tags: Tags,
}

pub struct Tracer {
    trace_id: u64,
    config: TracerConfig,
    clock: Arc<dyn Clock>,
    ids: IdGenerator,
    buffer: Mutex<Vec<Span>>,
    sink: Mutex<Box<dyn SpanSink>>,
    finished: AtomicU64,
    delivered: AtomicU64,
}

impl std::fmt::Debug for Tracer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tracer")
            .field("trace_id", &self.trace_id)
            .field("config", &self.config)
            .field("finished", &self.finished_count())
            .field("delivered", &self.delivered_count())
            .finish_non_exhaustive()
    }
}

impl Tracer {
    pub fn new(
        trace_id: u64,
        config: TracerConfig,
        clock: Arc<dyn Clock>,
        ids: IdGenerator,
        sink: Box<dyn SpanSink>,
    ) -> Self {
        let config = TracerConfig { buffer_capacity: config.buffer_capacity.max(1), ..config };
        Tracer {
            trace_id,
            buffer: Mutex::new(Vec::with_capacity(config.buffer_capacity)),
            config,
            clock,
            ids,
            sink: Mutex::new(sink),
            finished: AtomicU64::new(0),
            delivered: AtomicU64::new(0),
        }
    }

    pub fn trace_id(&self) -> u64 {
        self.trace_id
    }

    pub fn config(&self) -> &TracerConfig {
        &self.config
    }

    pub fn is_enabled(&self, level: Level) -> bool {
        self.config.enabled_levels.contains(level)
    }

    pub fn start_span(
        &self,
        name: impl Into<String>,
        level: Level,
        parent: Option<&SpanHandle>,
        tags: Tags,
    ) -> SpanHandle {
        let name = name.into();
        if !self.is_enabled(level) {
            return SpanHandle {
                span_id: 0,
                trace_id: self.trace_id,
                level,
                begin_ns: 0,
                parent_id: None,
                name,
                tags,
                state: HandleState::Inert,
            };
        }
        SpanHandle {
            span_id: self.ids.next_id(),
            trace_id: self.trace_id,
            level,
            begin_ns: self.clock.now_ns(),
            parent_id: parent.and_then(SpanHandle::span_id),
            name,
            tags,
            state: HandleState::Open,
        }
    }

    /// Closes the span at the current clock time and buffers it. Returns
    /// `None` for inert handles.
    pub fn finish_span(&self, handle: &mut SpanHandle) -> Result<Option<Span>, TracerError> {
        match handle.state {
            HandleState::Closed => return Err(TracerError::DoubleFinish { span_id: handle.span_id }),
            HandleState::Inert => {
                handle.state = HandleState::Closed;
                return Ok(None);
            }
            HandleState::Open => {}
        }
        handle.state = HandleState::Closed;
        let span = Span {
            span_id: handle.span_id,
            trace_id: handle.trace_id,
            parent_id: handle.parent_id,
            name: std::mem::take(&mut handle.name),
            level: handle.level,
            kind: SpanKind::Sync,
            begin_ns: handle.begin_ns,
            end_ns: self.clock.now_ns().max(handle.begin_ns),
            correlation_id: None,
            tags: std::mem::take(&mut handle.tags),
        };
        self.publish(vec![span.clone()]);
        Ok(Some(span))
    }

    /// Publishes a launch span and its execution span. The execution span is
    /// published without a parent; the correlator attaches it to the launch
    /// span's parent.
    pub fn record_async_pair(
        &self,
        launch: PendingSpan,
        exec: PendingSpan,
    ) -> Result<Option<(Span, Span)>, TracerError> {
        if launch.correlation_id != exec.correlation_id {
            return Err(TracerError::CorrelationMismatch {
                launch: launch.correlation_id,
                exec: exec.correlation_id,
            });
        }
        for s in [&launch, &exec] {
            if s.end_ns < s.begin_ns {
                return Err(TracerError::InvalidInterval { name: s.name.clone() });
            }
        }
        if exec.parent_id.is_some() {
            return Err(TracerError::ExecWithParent { name: exec.name });
        }
        if !self.is_enabled(launch.level) || !self.is_enabled(exec.level) {
            return Ok(None);
        }
        let make = |p: PendingSpan, kind| Span {
            span_id: self.ids.next_id(),
            trace_id: self.trace_id,
            parent_id: p.parent_id,
            name: p.name,
            level: p.level,
            kind,
            begin_ns: p.begin_ns,
            end_ns: p.end_ns,
            correlation_id: Some(p.correlation_id),
            tags: p.tags,
        };
        let launch = make(launch, SpanKind::Launch);
        let exec = make(exec, SpanKind::Exec);
        self.publish(vec![launch.clone(), exec.clone()]);
        Ok(Some((launch, exec)))
    }

    fn publish(&self, spans: Vec<Span>) {
        let n = spans.len() as u64;
        let full = {
            let mut buf = self.buffer.lock().unwrap();
            buf.extend(spans);
            self.finished.fetch_add(n, Ordering::SeqCst);
            buf.len() >= self.config.buffer_capacity
        };
        if full {
            // A failed inline flush keeps the spans buffered; the next
            // explicit flush reports the error.
            let _ = self.flush();
        }
    }

    /// Delivers every buffered span to the sink. On failure the spans stay
    /// buffered and the error is retriable.
    pub fn flush(&self) -> Result<usize, TracerError> {
        let mut sink = self.sink.lock().unwrap();
        let batch = std::mem::take(&mut *self.buffer.lock().unwrap());
        if batch.is_empty() {
            return Ok(0);
        }
        match sink.deliver(&batch) {
            Ok(()) => {
                self.delivered.fetch_add(batch.len() as u64, Ordering::SeqCst);
                Ok(batch.len())
            }
            Err(source) => {
                let mut buf = self.buffer.lock().unwrap();
                let retained = batch.len() + buf.len();
                let newer = std::mem::replace(&mut *buf, batch);
                buf.extend(newer);
                Err(TracerError::Delivery { source, retained })
            }
        }
    }

    pub fn buffered(&self) -> usize {
        self.buffer.lock().unwrap().len()
    }

    pub fn finished_count(&self) -> u64 {
        self.finished.load(Ordering::SeqCst)
    }

    pub fn delivered_count(&self) -> u64 {
        self.delivered.load(Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;
    use std::collections::HashSet;
    use std::sync::atomic::AtomicBool;

    fn tracer(levels: LevelSet, capacity: usize) -> (Tracer, VirtualClock, MemorySink) {
        let clock = VirtualClock::new(0);
        let sink = MemorySink::new();
        let t = Tracer::new(
            7,
            TracerConfig::new(levels).with_capacity(capacity),
            Arc::new(clock.clone()),
            IdGenerator::starting_at(1),
            Box::new(sink.clone()),
        );
        (t, clock, sink)
    }

    fn pending(name: &str, level: Level, b: u64, e: u64, cid: u64) -> PendingSpan {
        PendingSpan {
            name: name.into(),
            level,
            begin_ns: b,
            end_ns: e,
            parent_id: None,
            correlation_id: cid,
            tags: Tags::new(),
        }
    }

    #[test]
    fn root_span_has_no_parent() {
        let (t, _, _) = tracer(LevelSet::full(), 16);
        let mut h = t.start_span("predict", Level::Model, None, Tags::new());
        let s = t.finish_span(&mut h).unwrap().unwrap();
        assert_eq!(s.parent_id, None);
        assert_eq!(s.trace_id, 7);
    }

    #[test]
    fn child_records_parent() {
        let (t, _, sink) = tracer(LevelSet::full(), 16);
        let mut m = t.start_span("predict", Level::Model, None, Tags::new());
        let mut l = t.start_span("conv", Level::Layer, Some(&m), Tags::new());
        t.finish_span(&mut l).unwrap();
        t.finish_span(&mut m).unwrap();
        t.flush().unwrap();
        let spans = sink.spans();
        let layer = spans.iter().find(|s| s.level == Level::Layer).unwrap();
        assert_eq!(layer.parent_id, m.span_id());
    }

    #[test]
    fn disabled_level_publishes_nothing() {
        for enabled in [true, false] {
            let levels = if enabled { LevelSet::full() } else { LevelSet::model_layer() };
            let (t, _, sink) = tracer(levels, 16);
            let mut k = t.start_span("k", Level::Kernel, None, Tags::new());
            assert_eq!(k.is_inert(), !enabled);
            t.finish_span(&mut k).unwrap();
            t.flush().unwrap();
            assert_eq!(sink.len(), usize::from(enabled));
        }
    }

    #[test]
    fn duration_follows_clock() {
        let (t, clock, _) = tracer(LevelSet::full(), 16);
        clock.set(100);
        let mut h = t.start_span("x", Level::Layer, None, Tags::new());
        clock.advance(5);
        let s = t.finish_span(&mut h).unwrap().unwrap();
        assert_eq!((s.begin_ns, s.duration_ns()), (100, 5));
    }

    #[test]
    fn double_finish_is_an_error() {
        let (t, _, sink) = tracer(LevelSet::full(), 16);
        let mut h = t.start_span("x", Level::Model, None, Tags::new());
        t.finish_span(&mut h).unwrap();
        let err = t.finish_span(&mut h).unwrap_err();
        assert!(matches!(err, TracerError::DoubleFinish { .. }));
        t.flush().unwrap();
        assert_eq!(sink.len(), 1);
    }

    #[test]
    fn async_pair_is_published() {
        let (t, _, sink) = tracer(LevelSet::full(), 16);
        let mut launch = pending("cudaLaunchKernel", Level::Api, 10, 11, 42);
        launch.parent_id = Some(3);
        let mut exec = pending("volta_sgemm", Level::Kernel, 15, 20, 42);
        exec.tags.insert("flop_count_sp".into(), 100i64.into());
        let (l, e) = t.record_async_pair(launch, exec).unwrap().unwrap();
        assert_eq!(l.kind, SpanKind::Launch);
        assert_eq!(l.parent_id, Some(3));
        assert_eq!(e.parent_id, None);
        assert_eq!(e.correlation_id, Some(42));
        assert_eq!(crate::span::KernelMetrics::from_tags(&e.tags).flop_count_sp, 100.0);
        assert_eq!(t.flush().unwrap(), 2);
        assert_eq!(sink.len(), 2);
    }

    #[test]
    fn async_pair_rejects_mismatched_ids() {
        let (t, _, _) = tracer(LevelSet::full(), 16);
        let err = t
            .record_async_pair(pending("l", Level::Api, 0, 1, 1), pending("e", Level::Kernel, 1, 2, 2))
            .unwrap_err();
        assert_eq!(err, TracerError::CorrelationMismatch { launch: 1, exec: 2 });
    }

    #[test]
    fn async_pair_skipped_when_kernel_disabled() {
        let (t, _, _) = tracer(LevelSet::model_layer(), 16);
        let r = t
            .record_async_pair(pending("l", Level::Api, 0, 1, 1), pending("e", Level::Kernel, 1, 2, 1))
            .unwrap();
        assert!(r.is_none());
        assert_eq!(t.finished_count(), 0);
    }

    #[test]
    fn flush_counts() {
        let (t, _, _) = tracer(LevelSet::full(), 16);
        for _ in 0..3 {
            let mut h = t.start_span("x", Level::Layer, None, Tags::new());
            t.finish_span(&mut h).unwrap();
        }
        assert_eq!(t.flush().unwrap(), 3);
        assert_eq!(t.buffered(), 0);
        assert_eq!(t.flush().unwrap(), 0);
    }

    #[test]
    fn full_buffer_flushes_inline() {
        let (t, _, sink) = tracer(LevelSet::full(), 2);
        for _ in 0..5 {
            let mut h = t.start_span("x", Level::Layer, None, Tags::new());
            t.finish_span(&mut h).unwrap();
        }
        assert_eq!(sink.len(), 4);
        assert_eq!(t.buffered(), 1);
    }

    struct FlakySink {
        down: Arc<AtomicBool>,
        inner: MemorySink,
    }

    impl SpanSink for FlakySink {
        fn deliver(&mut self, spans: &[Span]) -> Result<(), DeliveryError> {
            if self.down.load(Ordering::SeqCst) {
                return Err(DeliveryError("collector unreachable".into()));
            }
            self.inner.deliver(spans)
        }
    }

    #[test]
    fn failed_delivery_retains_spans() {
        let down = Arc::new(AtomicBool::new(true));
        let inner = MemorySink::new();
        let t = Tracer::new(
            1,
            TracerConfig::new(LevelSet::full()),
            Arc::new(VirtualClock::new(0)),
            IdGenerator::starting_at(1),
            Box::new(FlakySink { down: down.clone(), inner: inner.clone() }),
        );
        for _ in 0..4 {
            let mut h = t.start_span("x", Level::Layer, None, Tags::new());
            t.finish_span(&mut h).unwrap();
        }
        let err = t.flush().unwrap_err();
        assert!(matches!(err, TracerError::Delivery { retained: 4, .. }));
        assert_eq!(t.buffered(), 4);
        down.store(false, Ordering::SeqCst);
        assert_eq!(t.flush().unwrap(), 4);
        assert_eq!(inner.len(), 4);
    }

    #[test]
    fn concurrent_workers_publish_exactly_once() {
        let (t, _, sink) = tracer(LevelSet::full(), 64);
        let t = Arc::new(t);
        std::thread::scope(|scope| {
            for _ in 0..8 {
                let t = t.clone();
                scope.spawn(move || {
                    for _ in 0..125 {
                        let mut h = t.start_span("k", Level::Layer, None, Tags::new());
                        t.finish_span(&mut h).unwrap();
                    }
                });
            }
            let t = t.clone();
            scope.spawn(move || {
                for _ in 0..50 {
                    let _ = t.flush();
                }
            });
        });
        t.flush().unwrap();
        let spans = sink.spans();
        assert_eq!(spans.len(), 1000);
        let ids: HashSet<u64> = spans.iter().map(|s| s.span_id).collect();
        assert_eq!(ids.len(), 1000);
    }

    #[test]
    fn accounting_identity_under_concurrent_flush() {
        let (t, _, sink) = tracer(LevelSet::full(), 10_000);
        let t = Arc::new(t);
        let observed = std::thread::scope(|scope| {
            for _ in 0..4 {
                let t = t.clone();
                scope.spawn(move || {
                    for _ in 0..500 {
                        let mut h = t.start_span("k", Level::Layer, None, Tags::new());
                        t.finish_span(&mut h).unwrap();
                    }
                });
            }
            let t = t.clone();
            scope
                .spawn(move || {
                    let mut delivered = 0;
                    for _ in 0..20 {
                        delivered += t.flush().unwrap();
                    }
                    delivered
                })
                .join()
                .unwrap()
        });
        assert_eq!(observed + t.buffered(), 2000);
        assert_eq!(sink.len() + t.buffered(), 2000);
    }
}
