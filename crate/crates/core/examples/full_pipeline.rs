//! Simulate, persist, ingest, correlate, subtract overhead and run every
//! analysis, writing CSV reports to a directory.
//!
//! ```text
//! cargo run --release --example full_pipeline [out_dir]
//! ```

use std::path::PathBuf;

use stackscope::analysis::{AnalysisConfig, AnalysisKind, Evaluation};
use stackscope::collector;
use stackscope::correlate;
use stackscope::leveled::{compute_overhead, LeveledRunGroup, OverheadConfig};
use stackscope::report::{self, Format};
use stackscope::sim::{emit_run, fixtures, EmitConfig};
use stackscope::LevelSet;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("stackscope-demo"));
    let model = fixtures::builtin("resnet-like")?;
    let overhead = fixtures::suggested_overhead("resnet-like");
    let chain = [LevelSet::model(), LevelSet::model_layer(), LevelSet::full()];

    let mut paths = Vec::new();
    let mut seed = 100;
    for batch in [1, 4, 16, 64] {
        for levels in &chain {
            for run_index in 0..3 {
                let config =
                    EmitConfig { overhead, seed, run_index, jitter_ns: 500, ..EmitConfig::new(batch, levels.clone()) };
                seed += 1;
                let bundle = emit_run(&model, &config)?;
                let path = out.join("runs").join(format!("b{batch:03}_{}_{run_index}.jsonl", levels.len()));
                std::fs::create_dir_all(path.parent().unwrap())?;
                collector::persist(&bundle, &path)?;
                paths.push(path);
            }
        }
    }
    println!("wrote {} runs under {}", paths.len(), out.join("runs").display());

    let mut trees = Vec::new();
    for p in &paths {
        let c = correlate::correlate(&collector::load(p)?)?;
        assert!(c.ambiguity.is_empty());
        trees.push(c.tree);
    }

    for batch in [1, 64] {
        let group = LeveledRunGroup::from_trees(trees.iter().filter(|t| t.meta.batch_size == batch).cloned())?;
        let r = compute_overhead(&group, &OverheadConfig::default())?;
        let steps: Vec<String> =
            r.level_totals.iter().map(|t| format!("{}: +{:.2} ms", t.added, t.overhead_ns / 1e6)).collect();
        println!("batch {batch} overhead {}", steps.join(", "));
    }

    let eval = Evaluation::from_trees(&trees, 0.2)?;
    let config = AnalysisConfig::default();
    let reports = out.join("reports");
    for kind in AnalysisKind::ALL {
        let output = eval.run(kind, &config)?;
        report::write_output(&reports, kind, &output, Format::Csv)?;
    }
    println!("wrote {} analyses to {}\n", AnalysisKind::ALL.len(), reports.display());

    let a13 = eval.run(AnalysisKind::A13, &AnalysisConfig { batch_size: Some(64), ..config.clone() })?;
    print!("{}", report::render_output(AnalysisKind::A13, &a13, 5)?);
    let a1 = eval.run(AnalysisKind::A1, &config)?;
    print!("{}", report::render_output(AnalysisKind::A1, &a1, 10)?);
    Ok(())
}
