//! Trimmed means and throughput-curve scans.

use serde::Serialize;

use super::AnalysisError;

/// Mean after dropping `floor(fraction * n)` values from each end of the
/// sorted sample.
pub fn trimmed_mean(values: &[f64], fraction: f64) -> Result<f64, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::EmptySample);
    }
    if !(0.0..0.5).contains(&fraction) {
        return Err(AnalysisError::InvalidTrim(fraction));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = (fraction * sorted.len() as f64).floor() as usize;
    let kept = &sorted[k..sorted.len() - k];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Trimmed mean of integer nanosecond latencies.
pub fn trimmed_mean_ns(values: &[u64], fraction: f64) -> Result<f64, AnalysisError> {
    let v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
    trimmed_mean(&v, fraction)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub batch_size: u32,
    /// Inputs per second.
    pub throughput: f64,
    pub latency_ns: f64,
}

impl CurvePoint {
    pub fn new(batch_size: u32, latency_ns: f64) -> Self {
        CurvePoint { batch_size, throughput: batch_size as f64 / (latency_ns * 1e-9), latency_ns }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalBatch {
    pub batch_size: u32,
    pub warning: Option<String>,
}

/// Scans batch sizes in ascending order and stops at the first `b` whose
/// successor does not improve throughput by more than `epsilon`.
pub fn optimal_batch_size(curve: &[CurvePoint], epsilon: f64) -> Result<OptimalBatch, AnalysisError> {
    let mut pts = curve.to_vec();
    pts.sort_by_key(|p| p.batch_size);
    match pts.len() {
        0 => return Err(AnalysisError::EmptySample),
        1 => {
            return Ok(OptimalBatch {
                batch_size: pts[0].batch_size,
                warning: Some("only one batch size evaluated".into()),
            })
        }
        _ => {}
    }
    let doubling = pts.windows(2).all(|w| w[1].batch_size == 2 * w[0].batch_size);
    let warning = (!doubling).then(|| "batch sizes are not a doubling chain".to_string());
    for w in pts.windows(2) {
        if w[1].throughput <= (1.0 + epsilon) * w[0].throughput {
            return Ok(OptimalBatch { batch_size: w[0].batch_size, warning });
        }
    }
    Ok(OptimalBatch { batch_size: pts[pts.len() - 1].batch_size, warning })
}
