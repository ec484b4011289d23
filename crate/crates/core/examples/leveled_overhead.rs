//! Capture the same workload at M, M/L and M/L/G, then subtract the
//! overhead each profiling level adds.
//!
//! ```text
//! cargo run --release --example leveled_overhead
//! ```

use stackscope::correlate;
use stackscope::leveled::{compute_overhead, EventKey, LeveledRunGroup, OverheadConfig};
use stackscope::sim::{emit_run, fixtures, EmitConfig};
use stackscope::{Level, LevelSet};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = fixtures::builtin("leveled-reference")?;
    let overhead = fixtures::leveled_reference_overhead();
    let chain = [LevelSet::model(), LevelSet::model_layer(), LevelSet::full()];

    let mut group = LeveledRunGroup::new();
    let mut seed = 1;
    for levels in &chain {
        for run_index in 0..3 {
            let config = EmitConfig {
                overhead,
                seed,
                run_index,
                jitter_ns: 2_000,
                ..EmitConfig::new(256, levels.clone())
            };
            seed += 1;
            group.insert(correlate::correlate(&emit_run(&model, &config)?)?.tree)?;
        }
    }

    let report = compute_overhead(&group, &OverheadConfig::default())?;
    let ms = |ns: f64| ns / 1e6;
    if let Some(model_event) = report.event(EventKey::Model) {
        for (levels, lat) in &model_event.latencies {
            println!("model latency at {levels}: {:.1} ms", ms(*lat));
        }
    }
    for t in &report.level_totals {
        println!("{} -> {}: +{:.1} ms", t.from, t.to, ms(t.overhead_ns));
    }
    let first = EventKey::Layer { layer_index: 0 };
    if let Some(e) = report.event(first) {
        println!(
            "layer 0 accurate latency {:.3} ms, kernel profiling adds {:.3} ms",
            ms(e.accurate_latency_ns.unwrap_or_default()),
            ms(report.overhead(first, Level::Kernel).unwrap_or_default())
        );
    }
    println!("combined overhead {:.1} ms", ms(report.combined_overhead_ns));
    Ok(())
}
