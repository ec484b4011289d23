//! Report files and terminal tables for analysis outputs.
//!
//! Files carry canonical units (ns, bytes, flops, flops/s); terminal tables
//! convert to ms and MiB and round for display.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::{AnalysisKind, AnalysisOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}` (expected csv or json)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Io { path: PathBuf::new(), source: e.into_error() })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String, ReportError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// The tabular part of an output, as CSV. Outputs with a summary section
/// (A1, A13, roofline) keep only their rows here; the JSON form carries
/// everything.
pub fn output_csv(output: &AnalysisOutput) -> Result<String, ReportError> {
    match output {
        AnalysisOutput::ModelInfo(m) => to_csv(&m.rows),
        AnalysisOutput::Layers(r) => to_csv(r),
        AnalysisOutput::LayerLatency(r) => to_csv(r),
        AnalysisOutput::LayerAlloc(r) => to_csv(r),
        AnalysisOutput::LayerTypes(r) => to_csv(r),
        AnalysisOutput::Kernels(r) => to_csv(r),
        AnalysisOutput::KernelRoofline(r) => to_csv(r),
        AnalysisOutput::KernelsByName(r) => to_csv(r),
        AnalysisOutput::KernelsByLayer(r) => to_csv(r),
        AnalysisOutput::LayerMetrics(r) => to_csv(r),
        AnalysisOutput::GpuSplit(g) => to_csv(&g.layers),
        AnalysisOutput::LayerRoofline(r) => to_csv(r),
        AnalysisOutput::ModelAggregate(r) => to_csv(r),
        AnalysisOutput::Stages(r) => to_csv(r),
        AnalysisOutput::ModelRoofline(m) => to_csv(&m.points),
    }
}

/// Writes `<dir>/<name>.<ext>` for one analysis. A13 in CSV form also
/// writes the per-model GPU share as `<name>_models.csv`.
pub fn write_output(
    dir: &Path,
    kind: AnalysisKind,
    output: &AnalysisOutput,
    format: Format,
) -> Result<Vec<PathBuf>, ReportError> {
    let mut files = Vec::new();
    let path = dir.join(format!("{}.{}", kind.name(), format.extension()));
    let text = match format {
        Format::Csv => output_csv(output)?,
        Format::Json => to_json(output)?,
    };
    write_file(&path, &text)?;
    files.push(path);
    if let (Format::Csv, AnalysisOutput::GpuSplit(g)) = (format, output) {
        let path = dir.join(format!("{}_models.csv", kind.name()));
        write_file(&path, &to_csv(&g.models)?)?;
        files.push(path);
    }
    Ok(files)
}

pub fn write_file(path: &Path, text: &str) -> Result<(), ReportError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| ReportError::Io { path: parent.to_path_buf(), source: e })?;
    }
    fs::write(path, text).map_err(|e| ReportError::Io { path: path.to_path_buf(), source: e })
}

const MIB: f64 = 1_048_576.0;

/// Cuts a value to two decimals, toward zero. A relative guard keeps
/// values such as `0.29` from dropping to `0.28` through binary error.
pub fn two_decimals(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    let scaled = x * 100.0;
    let guard = scaled.abs() * 1e-12;
    (scaled + guard * scaled.signum()).trunc() / 100.0
}

/// Display text of a value at two decimals.
pub fn fmt2(x: f64) -> String {
    format!("{:.2}", two_decimals(x))
}

/// Display form of a canonical column: header and formatted cell.
fn display_cell(header: &str, cell: &str) -> (String, String) {
    let num = cell.parse::<f64>().ok();
    if let Some(stem) = header.strip_suffix("_ns") {
        let v = num.map(|v| fmt2(v / 1e6)).unwrap_or_default();
        return (format!("{stem}_ms"), v);
    }
    if let Some(stem) = header.strip_suffix("_bytes") {
        let v = num.map(|v| fmt2(v / MIB)).unwrap_or_default();
        return (format!("{stem}_mib"), v);
    }
    if header.contains("occupancy") || header.ends_with("_share") {
        let v = num.map(|v| fmt2(v * 100.0)).unwrap_or_default();
        return (format!("{header}_pct"), v);
    }
    if header.contains("throughput") && header.starts_with("arithmetic") {
        let v = num.map(|v| fmt2(v / 1e12)).unwrap_or_default();
        return (format!("{header}_tflops"), v);
    }
    if header.contains("flops") {
        let v = num.map(|v| fmt2(v / 1e9)).unwrap_or_default();
        return (format!("{header}_gflops"), v);
    }
    match num {
        Some(v) if cell.contains(['.', 'e', 'E']) => (header.to_string(), fmt2(v)),
        _ => (header.to_string(), cell.to_string()),
    }
}

/// Renders CSV text as an aligned table in display units.
pub fn render_table(csv_text: &str) -> String {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let headers: Vec<String> = match r.headers() {
        Ok(h) => h.iter().map(str::to_string).collect(),
        Err(_) => return String::new(),
    };
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut shown: Vec<String> = headers.iter().map(|h| display_cell(h, "").0).collect();
    for rec in r.records().flatten() {
        let mut row = Vec::with_capacity(headers.len());
        for (i, cell) in rec.iter().enumerate() {
            let (h, v) = display_cell(&headers[i], cell);
            shown[i] = h;
            row.push(v);
        }
        rows.push(row);
    }
    let mut widths: Vec<usize> = shown.iter().map(String::len).collect();
    for row in &rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(&shown);
    out.push('\n');
    for row in &rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

/// Terminal rendering of one analysis, at most `max_rows` rows.
pub fn render_output(kind: AnalysisKind, output: &AnalysisOutput, max_rows: usize) -> Result<String, ReportError> {
    let csv_text = output_csv(output)?;
    let total = csv_text.lines().count().saturating_sub(1);
    let clipped: String = csv_text.lines().take(max_rows + 1).map(|l| format!("{l}\n")).collect();
    let mut out = format!("== {} ({}) ==\n", kind.name(), kind.title());
    out.push_str(&render_table(&clipped));
    if total > max_rows {
        out.push_str(&format!("... {} more rows\n", total - max_rows));
    }
    match output {
        AnalysisOutput::ModelInfo(m) => {
            out.push_str(&format!(
                "online latency {} ms, max throughput {} inputs/s at batch {}, optimal batch {}\n",
                fmt2(m.online_latency_ns / 1e6),
                fmt2(m.max_throughput),
                m.max_throughput_batch_size,
                m.optimal_batch_size
            ));
            if let Some(w) = &m.warning {
                out.push_str(&format!("warning: {w}\n"));
            }
        }
        AnalysisOutput::ModelRoofline(m) => {
            out.push_str(&format!("ideal arithmetic intensity {} flops/byte\n", fmt2(m.ideal_arithmetic_intensity)));
        }
        _ => {}
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{LayerInfoRow, ModelGpuShare, GpuSplit};

    fn rows() -> Vec<LayerInfoRow> {
        vec![LayerInfoRow {
            batch_size: 256,
            layer_index: 208,
            name: "conv2d_48/Conv2D".into(),
            layer_type: "Conv2D".into(),
            shape: None,
            latency_ns: 7_300_000.0,
            alloc_bytes: 411_041_792.0,
        }]
    }

    #[test]
    fn csv_keeps_canonical_units() {
        let text = to_csv(&rows()).unwrap();
        assert_eq!(
            text,
            "batch_size,layer_index,name,layer_type,shape,latency_ns,alloc_bytes\n\
             256,208,conv2d_48/Conv2D,Conv2D,,7300000.0,411041792.0\n"
        );
    }

    #[test]
    fn table_uses_display_units() {
        let t = render_table(&to_csv(&rows()).unwrap());
        let mut lines = t.lines();
        let head: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
        assert_eq!(head, ["batch_size", "layer_index", "name", "layer_type", "shape", "latency_ms", "alloc_mib"]);
        let row: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
        assert_eq!(row, ["256", "208", "conv2d_48/Conv2D", "Conv2D", "7.30", "392.00"]);
    }

    #[test]
    fn two_decimal_display() {
        assert_eq!(fmt2(92.43773859298308), "92.43");
        assert_eq!(fmt2(30.885293582984914), "30.88");
        assert_eq!(fmt2(0.29), "0.29");
        assert_eq!(fmt2(-1.005), "-1.00");
        assert_eq!(fmt2(7.0), "7.00");
    }

    #[test]
    fn gpu_split_writes_model_file() {
        let dir = tempfile::tempdir().unwrap();
        let out = AnalysisOutput::GpuSplit(GpuSplit {
            layers: vec![],
            models: vec![ModelGpuShare {
                batch_size: 1,
                model_latency_ns: 10.0,
                gpu_latency_ns: 5.0,
                gpu_latency_percentage: 50.0,
            }],
        });
        let files = write_output(dir.path(), AnalysisKind::A13, &out, Format::Csv).unwrap();
        assert_eq!(files.len(), 2);
        let models = fs::read_to_string(&files[1]).unwrap();
        assert!(models.starts_with("batch_size,model_latency_ns"));
        let files = write_output(dir.path(), AnalysisKind::A13, &out, Format::Json).unwrap();
        assert_eq!(files.len(), 1);
        assert!(files[0].ends_with("a13.json"));
    }
}
