//! Roofline math and metric aggregation.

use serde::Serialize;

use crate::span::{KernelMetrics, SystemSpec};

/// Flops per byte of DRAM traffic. `None` when no bytes moved.
pub fn arithmetic_intensity(flops: f64, read_bytes: f64, write_bytes: f64) -> Option<f64> {
    let bytes = read_bytes + write_bytes;
    (bytes > 0.0).then(|| flops / bytes)
}

/// Flops per second. `None` for zero latency.
pub fn arithmetic_throughput(flops: f64, latency_ns: f64) -> Option<f64> {
    (latency_ns > 0.0).then(|| flops / (latency_ns * 1e-9))
}

/// Ridge point of the roofline: peak flops over memory bandwidth.
pub fn ideal_arithmetic_intensity(spec: &SystemSpec) -> f64 {
    spec.peak_flops / spec.memory_bandwidth_bytes_per_s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RooflinePoint {
    pub subject: String,
    pub arithmetic_intensity: f64,
    pub arithmetic_throughput: Option<f64>,
    pub memory_bound: bool,
}

/// Places a subject on the roofline. Returns `None` when the intensity is
/// undefined (no DRAM traffic).
pub fn classify(
    subject: impl Into<String>,
    flops: f64,
    read_bytes: f64,
    write_bytes: f64,
    latency_ns: f64,
    spec: &SystemSpec,
) -> Option<RooflinePoint> {
    let ai = arithmetic_intensity(flops, read_bytes, write_bytes)?;
    Some(RooflinePoint {
        subject: subject.into(),
        arithmetic_intensity: ai,
        arithmetic_throughput: arithmetic_throughput(flops, latency_ns),
        memory_bound: ai < ideal_arithmetic_intensity(spec),
    })
}

/// Running sums over a set of kernels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct AggregateMetrics {
    pub total_latency_ns: f64,
    pub total_flops: f64,
    pub total_dram_read_bytes: f64,
    pub total_dram_write_bytes: f64,
    occupancy_weight: f64,
    pub count: usize,
}

impl AggregateMetrics {
    pub fn add(&mut self, latency_ns: f64, m: &KernelMetrics) {
        self.total_latency_ns += latency_ns;
        self.total_flops += m.flop_count_sp;
        self.total_dram_read_bytes += m.dram_read_bytes;
        self.total_dram_write_bytes += m.dram_write_bytes;
        self.occupancy_weight += m.achieved_occupancy * latency_ns;
        self.count += 1;
    }

    /// Latency-weighted mean occupancy; `None` when total latency is zero.
    pub fn weighted_achieved_occupancy(&self) -> Option<f64> {
        (self.total_latency_ns > 0.0).then(|| self.occupancy_weight / self.total_latency_ns)
    }

    pub fn arithmetic_intensity(&self) -> Option<f64> {
        arithmetic_intensity(self.total_flops, self.total_dram_read_bytes, self.total_dram_write_bytes)
    }

    pub fn arithmetic_throughput(&self) -> Option<f64> {
        arithmetic_throughput(self.total_flops, self.total_latency_ns)
    }

    pub fn memory_bound(&self, spec: &SystemSpec) -> Option<bool> {
        self.arithmetic_intensity().map(|ai| ai < ideal_arithmetic_intensity(spec))
    }
}

impl<'a> FromIterator<(f64, &'a KernelMetrics)> for AggregateMetrics {
    fn from_iter<I: IntoIterator<Item = (f64, &'a KernelMetrics)>>(iter: I) -> Self {
        let mut agg = AggregateMetrics::default();
        for (lat, m) in iter {
            agg.add(lat, m);
        }
        agg
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MIB: f64 = 1024.0 * 1024.0;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        ((a - b) / b).abs() <= rel
    }

    #[test]
    fn kernel_row_reproduces_table() {
        let ai = arithmetic_intensity(77.42e9, 40.33 * MIB, 43.86 * MIB).unwrap();
        assert!(close(ai, 876.97, 1e-3), "{ai}");
        let tp = arithmetic_throughput(77.42e9, 6.04e6).unwrap();
        assert!(close(tp, 12.82e12, 1e-3), "{tp}");
    }

    #[test]
    fn ridge_points() {
        assert!((ideal_arithmetic_intensity(&SystemSpec::tesla_v100()) - 17.44).abs() < 0.01);
        assert!((ideal_arithmetic_intensity(&SystemSpec::tesla_p100()) - 12.70).abs() < 0.01);
        assert!((ideal_arithmetic_intensity(&SystemSpec::quadro_rtx()) - 26.12).abs() < 0.01);
    }

    #[test]
    fn boundary_is_compute_bound() {
        let spec = SystemSpec::new("x", 10.0, 1.0);
        assert!(!classify("k", 100.0, 5.0, 5.0, 1.0, &spec).unwrap().memory_bound);
        assert!(classify("k", 0.0, 5.0, 5.0, 1.0, &spec).unwrap().memory_bound);
        assert!(classify("k", 1.0, 0.0, 0.0, 1.0, &spec).is_none());
        assert_eq!(arithmetic_intensity(0.0, 1.0, 0.0), Some(0.0));
        assert_eq!(arithmetic_throughput(0.0, 5.0), Some(0.0));
        assert_eq!(arithmetic_throughput(1.0, 0.0), None);
    }

    #[test]
    fn weighted_occupancy() {
        let a = KernelMetrics { achieved_occupancy: 0.2, ..Default::default() };
        let b = KernelMetrics { achieved_occupancy: 0.6, ..Default::default() };
        let agg: AggregateMetrics = [(1.0e6, &a), (3.0e6, &b)].into_iter().collect();
        assert!((agg.weighted_achieved_occupancy().unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(AggregateMetrics::default().weighted_achieved_occupancy(), None);
    }

    proptest! {
        #[test]
        fn classify_monotone_in_flops(f in 0.0f64..1e12, df in 0.0f64..1e12, r in 1.0f64..1e10, w in 0.0f64..1e10) {
            let spec = SystemSpec::tesla_v100();
            let lo = classify("k", f, r, w, 1.0, &spec).unwrap();
            let hi = classify("k", f + df, r, w, 1.0, &spec).unwrap();
            prop_assert!(!(lo.memory_bound == false && hi.memory_bound));
        }
    }
}
