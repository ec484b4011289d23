//! Two layers that overlap in time make kernel parents ambiguous. A rerun
//! with parallel events serialized settles them.
//!
//! ```text
//! cargo run --example resolve_ambiguity
//! ```

use stackscope::correlate::{self, demand_serialized_rerun};
use stackscope::sim::{emit_run, fixtures, EmitConfig};
use stackscope::LevelSet;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = fixtures::builtin("overlap")?;
    let config = EmitConfig { seed: 7, ..EmitConfig::new(1, LevelSet::full()) };
    let parallel = emit_run(&model, &config)?;

    let first = correlate::correlate(&parallel)?;
    println!("parallel run: {} ambiguous spans", first.ambiguity.len());
    for a in &first.ambiguity.entries {
        let name = &parallel.span(a.span_id).map(|s| s.name.clone()).unwrap_or_default();
        println!("  span {} ({name}) could belong to {:?}", a.span_id, a.candidates);
    }
    if !demand_serialized_rerun(&first.ambiguity) {
        return Ok(());
    }

    let twin = emit_run(&model, &EmitConfig { serialized: true, seed: 8, ..config })?;
    let resolved = correlate::resolve_with_serialized(&parallel, &twin)?;
    println!("after resolution: {} ambiguous spans", resolved.ambiguity.len());
    for layer in resolved.tree.layers() {
        let names: Vec<&str> = layer.kernels.iter().map(|k| k.name()).collect();
        println!("  {} -> {:?}", layer.name(), names);
    }
    Ok(())
}
