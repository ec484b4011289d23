//! Instrument a tiny inference loop by hand, stream it as JSONL, read it
//! back and print the recovered hierarchy.
//!
//! ```text
//! cargo run --example trace_a_run
//! ```

use std::io::Write;
use std::sync::{Arc, Mutex};

use stackscope::clock::{Clock, VirtualClock};
use stackscope::collector::{self, JsonlSink};
use stackscope::correlate;
use stackscope::span::Tags;
use stackscope::tracer::{IdGenerator, PendingSpan, Tracer, TracerConfig};
use stackscope::{KernelMetrics, Level, LevelSet, RunMeta, SystemSpec};

/// Writer whose bytes stay readable after the sink is boxed.
#[derive(Clone, Default)]
struct SharedBuf(Arc<Mutex<Vec<u8>>>);

impl Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let meta = RunMeta {
        trace_id: 42,
        profiling_levels: LevelSet::full(),
        batch_size: 4,
        run_index: 0,
        system: SystemSpec::tesla_v100(),
        serialized: false,
    };
    let buf = SharedBuf::default();
    let clock = VirtualClock::new(0);
    let tracer = Tracer::new(
        meta.trace_id,
        TracerConfig::new(meta.profiling_levels.clone()),
        Arc::new(clock.clone()),
        IdGenerator::starting_at(1),
        Box::new(JsonlSink::new(buf.clone(), meta)),
    );

    let mut predict = tracer.start_span("predict", Level::Model, None, Tags::new());
    let mut cid = 0;
    for (i, layer_type) in ["Conv2D", "Relu", "MatMul"].into_iter().enumerate() {
        let mut tags = Tags::new();
        tags.insert("layer_type".into(), layer_type.into());
        tags.insert("alloc_bytes".into(), (1_i64 << 20).into());
        let mut layer = tracer.start_span(format!("layer_{i}/{layer_type}"), Level::Layer, Some(&predict), tags);
        clock.advance(2_000);
        for k in 0..2 {
            cid += 1;
            let launch_at = clock.now_ns();
            clock.advance(500);
            let mut ktags = Tags::new();
            KernelMetrics {
                flop_count_sp: 2.0e8,
                dram_read_bytes: 4.0e6,
                dram_write_bytes: 1.0e6,
                achieved_occupancy: 0.4 + 0.1 * k as f64,
            }
            .write_tags(&mut ktags);
            tracer.record_async_pair(
                PendingSpan {
                    name: "cudaLaunchKernel".into(),
                    level: Level::Api,
                    begin_ns: launch_at,
                    end_ns: clock.now_ns(),
                    parent_id: layer.span_id(),
                    correlation_id: cid,
                    tags: Tags::new(),
                },
                PendingSpan {
                    name: format!("{}_kernel_{k}", layer_type.to_lowercase()),
                    level: Level::Kernel,
                    begin_ns: clock.now_ns(),
                    end_ns: clock.now_ns() + 20_000,
                    parent_id: None,
                    correlation_id: cid,
                    tags: ktags,
                },
            )?;
            clock.advance(20_500);
        }
        tracer.finish_span(&mut layer)?;
        clock.advance(1_000);
    }
    tracer.finish_span(&mut predict)?;
    tracer.flush()?;

    let wire = buf.0.lock().unwrap().clone();
    println!("{} JSONL lines, {} bytes", wire.iter().filter(|b| **b == b'\n').count(), wire.len());

    let bundle = collector::ingest(wire.as_slice())?;
    let c = correlate::correlate(&bundle)?;
    println!("model {} ns", c.tree.model_latency_ns());
    for layer in c.tree.layers() {
        println!("  {:<18} {:>7} ns", layer.name(), layer.latency_ns());
        for k in &layer.kernels {
            println!("    {:<16} {:>7} ns  occupancy {:.2}", k.name(), k.latency_ns(), k.metrics.achieved_occupancy);
        }
    }
    Ok(())
}
