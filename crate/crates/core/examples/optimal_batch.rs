//! Sweep batch sizes, build the throughput curve and pick the optimal
//! batch size.
//!
//! ```text
//! cargo run --example optimal_batch [epsilon]
//! ```

use stackscope::analysis::{model_info, Evaluation};
use stackscope::correlate;
use stackscope::report::fmt2;
use stackscope::sim::{emit_run, fixtures, EmitConfig};
use stackscope::LevelSet;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epsilon: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0.05);
    let model = fixtures::builtin("resnet-like")?;

    let mut trees = Vec::new();
    for batch in [1, 2, 4, 8, 16, 32, 64, 128, 256] {
        let bundle = emit_run(&model, &EmitConfig::new(batch, LevelSet::model()))?;
        trees.push(correlate::correlate(&bundle)?.tree);
    }
    let eval = Evaluation::from_trees(&trees, 0.0)?;
    let info = model_info(&eval.curve(), epsilon)?;

    println!("{:>6} {:>12} {:>14}", "batch", "latency_ms", "inputs/s");
    for row in &info.rows {
        println!("{:>6} {:>12} {:>14}", row.batch_size, fmt2(row.latency_ns / 1e6), fmt2(row.throughput));
    }
    println!(
        "online latency {} ms, max throughput {} inputs/s at batch {}",
        fmt2(info.online_latency_ns / 1e6),
        fmt2(info.max_throughput),
        info.max_throughput_batch_size
    );
    println!("optimal batch size at epsilon {epsilon}: {}", info.optimal_batch_size);
    if let Some(w) = info.warning {
        println!("warning: {w}");
    }
    Ok(())
}
