use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::span::KernelMetrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticKernel {
    pub name: String,
    pub true_latency_ns: u64,
    pub launch_latency_ns: u64,
    pub metrics: KernelMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLayer {
    pub name: String,
    pub layer_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<String>,
    /// Wall time of the layer, kernels included.
    pub true_latency_ns: u64,
    pub alloc_bytes: u64,
    /// Runs alongside the previous layer unless the run is serialized.
    #[serde(default)]
    pub concurrent: bool,
    #[serde(default)]
    pub kernels: Vec<SyntheticKernel>,
}

impl SyntheticLayer {
    /// Layer time not spent in kernels.
    pub fn non_gpu_ns(&self) -> u64 {
        self.true_latency_ns.saturating_sub(self.kernels.iter().map(|k| k.true_latency_ns).sum())
    }
}

/// How kernel quantities grow with batch size relative to the reference
/// batch: `x(b) = x(ref) * (b / ref)^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchScaling {
    pub latency_exponent: f64,
    pub flops_exponent: f64,
    pub bytes_exponent: f64,
    pub alloc_exponent: f64,
}

impl Default for BatchScaling {
    fn default() -> Self {
        BatchScaling { latency_exponent: 0.9, flops_exponent: 1.0, bytes_exponent: 1.0, alloc_exponent: 1.0 }
    }
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModel {
    pub name: String,
    #[serde(default = "one")]
    pub reference_batch: u32,
    #[serde(default)]
    pub scaling: BatchScaling,
    pub layers: Vec<SyntheticLayer>,
}

impl SyntheticModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidModel(msg));
        if self.layers.is_empty() {
            return bad("model has no layers".into());
        }
        if self.reference_batch == 0 {
            return bad("reference batch must be positive".into());
        }
        if self.layers[0].concurrent {
            return bad("the first layer cannot be concurrent".into());
        }
        for l in &self.layers {
            if l.true_latency_ns == 0 {
                return bad(format!("layer {} has zero latency", l.name));
            }
            let launch: u64 = l.kernels.iter().map(|k| k.launch_latency_ns).sum();
            if launch > l.true_latency_ns {
                return bad(format!("layer {} is shorter than its kernel launches", l.name));
            }
            for k in &l.kernels {
                if k.true_latency_ns == 0 || k.launch_latency_ns == 0 {
                    return bad(format!("kernel {} in layer {} has zero latency", k.name, l.name));
                }
                if !k.metrics.is_valid() {
                    return bad(format!("kernel {} in layer {} has invalid metrics", k.name, l.name));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let m: SyntheticModel = serde_json::from_str(text).map_err(|e| SimError::InvalidModel(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::InvalidModel(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn kernel_count(&self) -> usize {
        self.layers.iter().map(|l| l.kernels.len()).sum()
    }

    /// The workload at batch size `b`. Kernel latency, flops, bytes and
    /// allocation scale by their exponents; the non-kernel part of each
    /// layer stays fixed, so throughput saturates.
    pub fn at_batch(&self, batch_size: u32) -> SyntheticModel {
        if batch_size == self.reference_batch {
            return self.clone();
        }
        let f = batch_size as f64 / self.reference_batch as f64;
        let s = self.scaling;
        let scale = |x: f64, e: f64| (x * f.powf(e)).round();
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let kernels: Vec<SyntheticKernel> = l
                    .kernels
                    .iter()
                    .map(|k| SyntheticKernel {
                        name: k.name.clone(),
                        true_latency_ns: (scale(k.true_latency_ns as f64, s.latency_exponent) as u64).max(1),
                        launch_latency_ns: k.launch_latency_ns,
                        metrics: KernelMetrics {
                            flop_count_sp: scale(k.metrics.flop_count_sp, s.flops_exponent),
                            dram_read_bytes: scale(k.metrics.dram_read_bytes, s.bytes_exponent),
                            dram_write_bytes: scale(k.metrics.dram_write_bytes, s.bytes_exponent),
                            achieved_occupancy: k.metrics.achieved_occupancy,
                        },
                    })
                    .collect();
                let gpu: u64 = kernels.iter().map(|k| k.true_latency_ns).sum();
                let non_gpu = if l.kernels.is_empty() {
                    scale(l.true_latency_ns as f64, s.latency_exponent) as u64
                } else {
                    l.non_gpu_ns()
                };
                SyntheticLayer {
                    name: l.name.clone(),
                    layer_type: l.layer_type.clone(),
                    shape: l.shape.clone(),
                    true_latency_ns: (non_gpu + gpu).max(1),
                    alloc_bytes: scale(l.alloc_bytes as f64, s.alloc_exponent) as u64,
                    concurrent: l.concurrent,
                    kernels,
                }
            })
            .collect();
        SyntheticModel { name: self.name.clone(), reference_batch: batch_size, scaling: self.scaling, layers }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::fixtures;

    #[test]
    fn builtin_fixtures_are_valid() {
        for name in fixtures::NAMES {
            fixtures::builtin(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn batch_scaling() {
        let m = fixtures::builtin("minimal").unwrap();
        let m4 = m.at_batch(4);
        let (k, k4) = (&m.layers[0].kernels[0], &m4.layers[0].kernels[0]);
        assert_eq!(k4.metrics.flop_count_sp, k.metrics.flop_count_sp * 4.0);
        assert_eq!(k4.true_latency_ns, (k.true_latency_ns as f64 * 4f64.powf(0.9)).round() as u64);
        assert_eq!(m4.layers[0].non_gpu_ns(), m.layers[0].non_gpu_ns());
        m4.validate().unwrap();
        assert_eq!(m.at_batch(1), m);
    }

    #[test]
    fn json_round_trip() {
        let m = fixtures::builtin("overlap").unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(SyntheticModel::from_json(&text).unwrap(), m);
        assert!(SyntheticModel::from_json(r#"{"name":"x","layers":[]}"#).is_err());
    }
}
