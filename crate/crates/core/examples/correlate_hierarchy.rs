//! Rebuild the model → layer → kernel tree of a simulated run whose spans
//! carry no parent links for kernels.
//!
//! ```text
//! cargo run --example correlate_hierarchy [fixture]
//! ```

use stackscope::correlate;
use stackscope::sim::{emit_run, fixtures, EmitConfig};
use stackscope::{LevelSet, SpanKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "async-straggler".into());
    let model = fixtures::builtin(&name)?;
    let bundle = emit_run(&model, &EmitConfig::new(1, LevelSet::full()))?;

    let orphans = bundle.spans.iter().filter(|s| s.parent_id.is_none()).count();
    let execs = bundle.spans.iter().filter(|s| s.kind == SpanKind::Exec).count();
    println!("{name}: {} spans, {orphans} without parent_id, {execs} async executions", bundle.spans.len());

    let c = correlate::correlate(&bundle)?;
    println!("ambiguous spans: {}", c.ambiguity.len());
    for d in &c.diagnostics {
        println!("diagnostic: {d:?}");
    }
    for layer in c.tree.layers().iter().take(8) {
        println!("[{}] {} ({}) {} ns", layer.layer_index, layer.name(), layer.layer_type, layer.latency_ns());
        for k in &layer.kernels {
            let tail = k.exec.end_ns.saturating_sub(layer.span.end_ns);
            let note = if tail > 0 { format!("  ends {tail} ns after its layer") } else { String::new() };
            println!("    {} {} ns{note}", k.name(), k.latency_ns());
        }
    }
    if c.tree.layers().len() > 8 {
        println!("... {} more layers", c.tree.layers().len() - 8);
    }
    Ok(())
}
