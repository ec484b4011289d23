//! Classify kernels and the whole model on the roofline of each GPU preset.
//!
//! ```text
//! cargo run --example roofline
//! ```

use stackscope::analysis::{classify, ideal_arithmetic_intensity, AnalysisConfig, AnalysisKind, AnalysisOutput, Evaluation};
use stackscope::correlate;
use stackscope::report::fmt2;
use stackscope::sim::{emit_run, fixtures, EmitConfig};
use stackscope::{LevelSet, SystemSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // a single kernel, placed by hand
    let v100 = SystemSpec::tesla_v100();
    if let Some(p) = classify("sgemm", 2.0e10, 1.2e8, 4.0e7, 1.6e6, &v100) {
        println!(
            "{}: intensity {} flops/byte, {} Tflops, memory bound: {}",
            p.subject,
            fmt2(p.arithmetic_intensity),
            fmt2(p.arithmetic_throughput.unwrap_or_default() / 1e12),
            p.memory_bound
        );
    }

    let mut trees = Vec::new();
    for name in ["resnet-like", "mobilenet-like"] {
        let model = fixtures::builtin(name)?;
        let bundle = emit_run(&model, &EmitConfig::new(16, LevelSet::full()))?;
        trees.push((name, correlate::correlate(&bundle)?.tree));
    }

    for spec in SystemSpec::presets() {
        println!("\n{} (ridge at {} flops/byte)", spec.name, fmt2(ideal_arithmetic_intensity(&spec)));
        for (name, tree) in &trees {
            let eval = Evaluation::from_trees([tree], 0.0)?.with_system(spec.clone());
            let AnalysisOutput::ModelRoofline(m) = eval.run(AnalysisKind::Roofline, &AnalysisConfig::default())? else {
                unreachable!()
            };
            let AnalysisOutput::KernelRoofline(kernels) = eval.run(AnalysisKind::A9, &AnalysisConfig::default())? else {
                unreachable!()
            };
            let bound = kernels.iter().filter(|k| k.memory_bound == Some(true)).count();
            for p in &m.points {
                println!(
                    "  {name:<15} intensity {:>7} throughput {:>6} Tflops  {bound}/{} kernels memory bound",
                    fmt2(p.arithmetic_intensity.unwrap_or_default()),
                    fmt2(p.arithmetic_throughput.unwrap_or_default() / 1e12),
                    kernels.len()
                );
            }
        }
    }
    Ok(())
}
