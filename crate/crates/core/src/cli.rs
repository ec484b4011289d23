//! Command-line front end.
//!
//! Exit status: 0 on success, 1 when an input fails validation or an
//! analysis cannot be computed from the given runs, 2 on usage errors
//! (bad flags, missing files).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{AnalysisConfig, AnalysisKind, Evaluation};
use crate::collector::{self, CollectorError};
use crate::correlate::{self, AmbiguityReport, Correlation, Diagnostic};
use crate::leveled::{compute_overhead, LeveledRunGroup, OverheadConfig, OverheadReport};
use crate::report::{self, Format};
use crate::sim::{emit_run, fixtures, EmitConfig, OverheadProfile, SyntheticModel};
use crate::span::{validate_bundle, LevelSet, SystemSpec, TraceBundle};

#[derive(Debug, Parser)]
#[command(name = "stackscope", version, about = "Across-stack trace analysis for model inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Play a synthetic workload and write one JSONL bundle per run.
    Simulate(SimulateArgs),
    /// Validate and merge tracer streams into persisted bundles.
    Ingest(IngestArgs),
    /// Build entity trees and report ambiguous parents.
    Correlate(CorrelateArgs),
    /// Per-level profiling overhead from a leveled group of runs.
    Overhead(OverheadArgs),
    /// Run analyses and write report files.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Built-in fixture name or path to a model JSON file.
    #[arg(long, default_value = "minimal")]
    pub fixture: String,
    /// Batch sizes.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub batch: Vec<u32>,
    /// Profiling level sets to run, e.g. `M M/L M/L/G`.
    #[arg(long, num_args = 1.., default_values = ["M", "M/L", "M/L/G"])]
    pub levels: Vec<String>,
    /// Repetitions per configuration.
    #[arg(long, default_value_t = 1)]
    pub runs: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Serialize concurrent layers.
    #[arg(long)]
    pub serialized: bool,
    /// Also write a serialized twin of every run.
    #[arg(long, conflicts_with = "serialized")]
    pub twins: bool,
    #[arg(long)]
    pub layer_overhead_ns: Option<u64>,
    #[arg(long)]
    pub kernel_overhead_ns: Option<u64>,
    #[arg(long)]
    pub metric_overhead: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub jitter_ns: u64,
    /// System preset name or JSON file recorded in the run metadata.
    #[arg(long)]
    pub system: Option<String>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// JSONL streams; streams sharing a trace_id are merged.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value = "bundles")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Bundles (files or directories of .jsonl).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Serialized reruns used to settle ambiguous parents.
    #[arg(long, num_args = 1..)]
    pub serialized: Vec<PathBuf>,
    #[arg(long, default_value = "trees")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OverheadArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub serialized: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub trim: f64,
    /// Relative tolerance under which negative overheads are clamped.
    #[arg(long, default_value_t = 0.01)]
    pub tolerance: f64,
    #[arg(long, default_value = "json")]
    pub format: Format,
    #[arg(long, default_value = "reports")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub serialized: Vec<PathBuf>,
    /// Comma-separated analyses (a1..a15, stages, roofline) or `all`.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub analysis: Vec<String>,
    /// System preset name or JSON file; defaults to the runs' metadata.
    #[arg(long)]
    pub system: Option<String>,
    #[arg(long, default_value_t = 0.2)]
    pub trim: f64,
    /// Throughput gain below which doubling the batch stops paying off.
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.01)]
    pub non_gpu_tolerance: f64,
    /// Restrict per-run analyses to one batch size.
    #[arg(long)]
    pub batch: Option<u32>,
    #[arg(long, default_value = "csv")]
    pub format: Format,
    #[arg(long, default_value = "reports")]
    pub out: PathBuf,
    /// Rows per table printed to stdout.
    #[arg(long, default_value_t = 10)]
    pub show: usize,
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Invalid(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Usage(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Invalid(m) => write!(f, "validation failed: {m}"),
        }
    }
}

fn invalid(e: impl fmt::Display) -> Failure {
    Failure::Invalid(e.to_string())
}

fn from_collector(e: CollectorError) -> Failure {
    match e {
        CollectorError::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => {
            Failure::Usage(format!("no such file: {}", path.display()))
        }
        other => invalid(other),
    }
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Ingest(a) => ingest(a),
        Command::Correlate(a) => correlate_cmd(a),
        Command::Overhead(a) => overhead(a),
        Command::Analyze(a) => analyze(a),
    }
}

fn load_model(fixture: &str) -> Result<SyntheticModel, Failure> {
    if let Ok(m) = fixtures::builtin(fixture) {
        return Ok(m);
    }
    let path = Path::new(fixture);
    if !path.exists() {
        return Err(Failure::Usage(format!(
            "`{fixture}` is neither a file nor a built-in fixture ({})",
            fixtures::NAMES.join(", ")
        )));
    }
    SyntheticModel::load(path).map_err(invalid)
}

fn load_system(arg: &str) -> Result<SystemSpec, Failure> {
    if let Some(s) = SystemSpec::preset(arg) {
        return Ok(s);
    }
    let path = Path::new(arg);
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("system `{arg}`: {e}")))?;
    let spec: SystemSpec = serde_json::from_str(&text).map_err(|e| invalid(format!("{arg}: {e}")))?;
    if !spec.is_valid() {
        return Err(invalid(format!("{arg}: peak flops and bandwidth must be positive")));
    }
    Ok(spec)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    report::write_file(path, text).map_err(|e| Failure::Usage(e.to_string()))
}

fn run_file_name(config: &EmitConfig) -> String {
    let levels: String = config.levels.iter().map(|l| l.code().to_ascii_lowercase()).collect();
    let suffix = if config.serialized { ".serialized" } else { "" };
    format!("b{:04}_{levels}_r{:02}{suffix}.jsonl", config.batch_size, config.run_index)
}

fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    let model = load_model(&a.fixture)?;
    let mut overhead = fixtures::suggested_overhead(&a.fixture);
    if !fixtures::NAMES.contains(&a.fixture.as_str()) {
        overhead = OverheadProfile::default();
    }
    overhead.layer_overhead_ns = a.layer_overhead_ns.unwrap_or(overhead.layer_overhead_ns);
    overhead.kernel_overhead_ns = a.kernel_overhead_ns.unwrap_or(overhead.kernel_overhead_ns);
    overhead.metric_overhead_multiplier = a.metric_overhead.unwrap_or(overhead.metric_overhead_multiplier);
    let system = a.system.as_deref().map(load_system).transpose()?;
    let chain = a
        .levels
        .iter()
        .map(|s| LevelSet::parse(s).map_err(|e| Failure::Usage(format!("--levels {s}: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if a.batch.contains(&0) {
        return Err(Failure::Usage("batch sizes must be positive".into()));
    }
    std::fs::create_dir_all(&a.out).map_err(|e| Failure::Usage(format!("{}: {e}", a.out.display())))?;

    let mut seed = a.seed;
    let mut written = 0;
    for &batch in &a.batch {
        for levels in &chain {
            for rep in 0..a.runs {
                let mut cfg = EmitConfig::new(batch, levels.clone());
                cfg.overhead = overhead;
                cfg.serialized = a.serialized;
                cfg.seed = seed;
                cfg.run_index = rep;
                cfg.jitter_ns = a.jitter_ns;
                if let Some(s) = &system {
                    cfg.system = s.clone();
                }
                seed = seed.wrapping_add(1);
                let mut configs = vec![cfg.clone()];
                if a.twins {
                    cfg.serialized = true;
                    cfg.seed = cfg.seed.wrapping_add(1 << 32);
                    configs.push(cfg);
                }
                for cfg in configs {
                    let bundle = emit_run(&model, &cfg).map_err(invalid)?;
                    let path = a.out.join(run_file_name(&cfg));
                    collector::persist(&bundle, &path).map_err(|e| Failure::Usage(e.to_string()))?;
                    written += 1;
                }
            }
        }
    }
    println!("wrote {written} runs of `{}` to {}", model.name, a.out.display());
    Ok(())
}

/// Expands directories to their `.jsonl` files, sorted by name.
fn expand(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            files.sort();
            out.extend(files);
        } else if p.exists() {
            out.push(p.clone());
        } else {
            return Err(Failure::Usage(format!("no such file: {}", p.display())));
        }
    }
    if out.is_empty() {
        return Err(Failure::Usage("no input bundles".into()));
    }
    Ok(out)
}

fn ingest(a: IngestArgs) -> Result<(), Failure> {
    let files = expand(&a.inputs)?;
    let mut groups: BTreeMap<u64, (PathBuf, Vec<TraceBundle>)> = BTreeMap::new();
    for f in &files {
        let part = collector::load_partial(f).map_err(|e| match from_collector(e) {
            Failure::Invalid(m) => Failure::Invalid(format!("{}: {m}", f.display())),
            other => other,
        })?;
        groups.entry(part.meta.trace_id).or_insert_with(|| (f.clone(), Vec::new())).1.push(part);
    }
    std::fs::create_dir_all(&a.out).map_err(|e| Failure::Usage(format!("{}: {e}", a.out.display())))?;
    for (trace_id, (first, parts)) in groups {
        let n = parts.len();
        let bundle = collector::merge(parts).map_err(invalid)?;
        let violations = validate_bundle(&bundle);
        if !violations.is_empty() {
            let text: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Err(invalid(format!("trace {trace_id}: {}", text.join("; "))));
        }
        let path = a.out.join(first.file_name().unwrap_or_default());
        collector::persist(&bundle, &path).map_err(|e| Failure::Usage(e.to_string()))?;
        println!("{}: trace {trace_id}, {n} stream(s), {} spans", path.display(), bundle.spans.len());
    }
    Ok(())
}

pub struct Correlated {
    pub path: PathBuf,
    pub correlation: Correlation,
    pub initial_ambiguities: usize,
    pub twin: Option<PathBuf>,
}

fn load_all(files: &[PathBuf]) -> Result<Vec<(PathBuf, TraceBundle)>, Failure> {
    files
        .iter()
        .map(|f| {
            collector::load(f)
                .map(|b| (f.clone(), b))
                .map_err(|e| match from_collector(e) {
                    Failure::Invalid(m) => Failure::Invalid(format!("{}: {m}", f.display())),
                    other => other,
                })
        })
        .collect()
}

/// Correlates every primary run, settling ambiguities with a serialized
/// twin of the same batch, level set and (when present) run index.
/// Serialized runs among `inputs` serve as twins; when every input is
/// serialized they are correlated directly.
pub fn correlate_inputs(inputs: &[PathBuf], twins: &[PathBuf]) -> Result<Vec<Correlated>, Failure> {
    let mut bundles = load_all(&expand(inputs)?)?;
    if !twins.is_empty() {
        bundles.extend(load_all(&expand(twins)?)?);
    }
    let (mut primary, serialized): (Vec<_>, Vec<_>) = bundles.into_iter().partition(|(_, b)| !b.meta.serialized);
    if primary.is_empty() {
        primary = serialized.clone();
    }
    let mut out = Vec::new();
    for (path, bundle) in primary {
        let c = correlate::correlate(&bundle).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let initial = c.ambiguity.len();
        let mut twin = None;
        let c = if correlate::demand_serialized_rerun(&c.ambiguity) {
            let m = &bundle.meta;
            let same = |b: &TraceBundle| b.meta.batch_size == m.batch_size && b.meta.profiling_levels == m.profiling_levels;
            let found = serialized
                .iter()
                .find(|(_, b)| same(b) && b.meta.run_index == m.run_index)
                .or_else(|| serialized.iter().find(|(_, b)| same(b)));
            match found {
                Some((tp, tb)) => {
                    twin = Some(tp.clone());
                    correlate::resolve_with_serialized(&bundle, tb)
                        .map_err(|e| invalid(format!("{}: {e}", tp.display())))?
                }
                None => c,
            }
        } else {
            c
        };
        out.push(Correlated { path, correlation: c, initial_ambiguities: initial, twin });
    }
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
}

#[derive(Serialize)]
struct AmbiguityFile<'a> {
    input: String,
    ambiguous_before_resolution: usize,
    serialized_twin: Option<String>,
    unresolved: &'a AmbiguityReport,
    diagnostics: &'a [Diagnostic],
}

fn correlate_cmd(a: CorrelateArgs) -> Result<(), Failure> {
    let runs = correlate_inputs(&a.inputs, &a.serialized)?;
    for r in &runs {
        let s = stem(&r.path);
        let tree = report::to_json(&r.correlation.tree).map_err(invalid)?;
        write(&a.out.join(format!("{s}.tree.json")), &tree)?;
        let amb = AmbiguityFile {
            input: r.path.display().to_string(),
            ambiguous_before_resolution: r.initial_ambiguities,
            serialized_twin: r.twin.as_ref().map(|p| p.display().to_string()),
            unresolved: &r.correlation.ambiguity,
            diagnostics: &r.correlation.diagnostics,
        };
        write(&a.out.join(format!("{s}.ambiguities.json")), &report::to_json(&amb).map_err(invalid)?)?;
        let status = match (r.initial_ambiguities, r.correlation.ambiguity.len()) {
            (0, _) => "unambiguous".to_string(),
            (n, 0) => format!("{n} ambiguous, resolved with serialized twin"),
            (n, left) => format!("{n} ambiguous, {left} unresolved; rerun with parallel events serialized"),
        };
        println!(
            "{}: {} layers, {} kernels, {status}",
            r.path.display(),
            r.correlation.tree.layers().len(),
            r.correlation.tree.kernels().count()
        );
    }
    Ok(())
}

fn trees_without_ambiguity(runs: Vec<Correlated>) -> Result<Vec<crate::correlate::EntityTree>, Failure> {
    let mut trees = Vec::with_capacity(runs.len());
    for r in runs {
        if !r.correlation.ambiguity.is_empty() {
            return Err(invalid(format!(
                "{}: {} spans have ambiguous parents; supply a serialized rerun with --serialized",
                r.path.display(),
                r.correlation.ambiguity.len()
            )));
        }
        trees.push(r.correlation.tree);
    }
    Ok(trees)
}

#[derive(Serialize)]
struct OverheadCsvRow {
    batch_size: u32,
    event: String,
    name: String,
    added: String,
    from: String,
    to: String,
    overhead_ns: f64,
    flag: Option<String>,
}

fn overhead_csv(reports: &[OverheadReport]) -> Vec<OverheadCsvRow> {
    let mut rows = Vec::new();
    for r in reports {
        for e in &r.events {
            let event = match e.event {
                crate::leveled::EventKey::Model => "model".to_string(),
                crate::leveled::EventKey::Layer { layer_index } => format!("layer {layer_index}"),
                crate::leveled::EventKey::Kernel { layer_index, ordinal } => {
                    format!("kernel {layer_index}.{ordinal}")
                }
            };
            for o in &e.overheads {
                rows.push(OverheadCsvRow {
                    batch_size: r.batch_size,
                    event: event.clone(),
                    name: e.name.clone(),
                    added: o.added.to_string(),
                    from: o.from.to_string(),
                    to: o.to.to_string(),
                    overhead_ns: o.overhead_ns,
                    flag: o.flag.map(|f| format!("{f:?}")),
                });
            }
        }
    }
    rows
}

fn overhead(a: OverheadArgs) -> Result<(), Failure> {
    if !(0.0..0.5).contains(&a.trim) {
        return Err(Failure::Usage(format!("--trim must be in [0, 0.5), got {}", a.trim)));
    }
    let trees = trees_without_ambiguity(correlate_inputs(&a.inputs, &a.serialized)?)?;
    let mut by_batch: BTreeMap<u32, Vec<_>> = BTreeMap::new();
    for t in trees {
        by_batch.entry(t.meta.batch_size).or_default().push(t);
    }
    let config = OverheadConfig { trim_fraction: a.trim, noise_tolerance: a.tolerance };
    let mut reports = Vec::new();
    for (batch, trees) in by_batch {
        let group = LeveledRunGroup::from_trees(trees).map_err(invalid)?;
        let r = compute_overhead(&group, &config).map_err(|e| invalid(format!("batch {batch}: {e}")))?;
        for lt in &r.level_totals {
            let flag = lt.flag.map(|f| format!(" ({f:?})")).unwrap_or_default();
            println!(
                "batch {batch}: {} -> {}: model overhead {} ms{flag}",
                lt.from,
                lt.to,
                report::fmt2(lt.overhead_ns / 1e6)
            );
        }
        reports.push(r);
    }
    let path = a.out.join(format!("overhead.{}", a.format.extension()));
    let text = match a.format {
        Format::Json => report::to_json(&reports),
        Format::Csv => report::to_csv(&overhead_csv(&reports)),
    }
    .map_err(invalid)?;
    write(&path, &text)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn parse_selection(items: &[String]) -> Result<Vec<AnalysisKind>, Failure> {
    let mut kinds = Vec::new();
    for item in items.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
        if item.eq_ignore_ascii_case("all") {
            kinds.extend(AnalysisKind::ALL);
            continue;
        }
        kinds.push(item.parse::<AnalysisKind>().map_err(|e| Failure::Usage(e.to_string()))?);
    }
    kinds.sort();
    kinds.dedup();
    if kinds.is_empty() {
        return Err(Failure::Usage("--analysis selects nothing".into()));
    }
    Ok(kinds)
}

fn analyze(a: AnalyzeArgs) -> Result<(), Failure> {
    let kinds = parse_selection(&a.analysis)?;
    if !(0.0..0.5).contains(&a.trim) {
        return Err(Failure::Usage(format!("--trim must be in [0, 0.5), got {}", a.trim)));
    }
    if !(a.epsilon >= 0.0) {
        return Err(Failure::Usage(format!("--epsilon must be non-negative, got {}", a.epsilon)));
    }
    let system = a.system.as_deref().map(load_system).transpose()?;
    let trees = trees_without_ambiguity(correlate_inputs(&a.inputs, &a.serialized)?)?;
    let mut eval = Evaluation::from_trees(&trees, a.trim).map_err(invalid)?;
    if let Some(s) = system {
        eval = eval.with_system(s);
    }
    let config = AnalysisConfig {
        trim_fraction: a.trim,
        epsilon: a.epsilon,
        non_gpu_tolerance: a.non_gpu_tolerance,
        batch_size: a.batch,
    };
    for &k in &kinds {
        eval.check_levels(k, &config).map_err(invalid)?;
    }
    for k in kinds {
        let output = eval.run(k, &config).map_err(invalid)?;
        let files = report::write_output(&a.out, k, &output, a.format).map_err(|e| Failure::Usage(e.to_string()))?;
        if a.show > 0 {
            print!("{}", report::render_output(k, &output, a.show).map_err(invalid)?);
        }
        for f in files {
            println!("wrote {}", f.display());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["stackscope", "analyze", "--bogus", "x"]), 2);
        assert_eq!(run(["stackscope"]), 2);
        assert_eq!(run(["stackscope", "analyze", "/nonexistent/run.jsonl"]), 2);
        assert_eq!(run(["stackscope", "--help"]), 0);
    }

    #[test]
    fn selection() {
        assert_eq!(parse_selection(&["all".into()]).unwrap().len(), 17);
        assert_eq!(
            parse_selection(&["a9".into(), "A1".into(), "a9".into()]).unwrap(),
            vec![AnalysisKind::A1, AnalysisKind::A9]
        );
        assert!(matches!(parse_selection(&["a16".into()]), Err(Failure::Usage(_))));
        assert!(matches!(parse_selection(&[]), Err(Failure::Usage(_))));
    }

    #[test]
    fn file_names() {
        let mut cfg = EmitConfig::new(16, LevelSet::full());
        cfg.run_index = 2;
        assert_eq!(run_file_name(&cfg), "b0016_mlg_r02.jsonl");
        cfg.serialized = true;
        assert_eq!(run_file_name(&cfg), "b0016_mlg_r02.serialized.jsonl");
    }
}
