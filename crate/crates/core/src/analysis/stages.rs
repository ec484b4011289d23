//! Beginning / middle / end attribution over layer execution order.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stage {
    B,
    M,
    E,
}

/// Sizes of the three contiguous stages for `n` layers:
/// `ceil(n/3)`, `ceil((n - ceil(n/3)) / 2)`, remainder.
pub fn stage_sizes(n: usize) -> [usize; 3] {
    let b = n.div_ceil(3);
    let m = (n - b).div_ceil(2);
    [b, m, n - b - m]
}

/// Stage with the largest sum; ties go to the earlier stage. `None` for
/// fewer than three values.
pub fn dominant_stage(values: &[f64]) -> Option<Stage> {
    if values.len() < 3 {
        return None;
    }
    let [b, m, _] = stage_sizes(values.len());
    let sums = [
        values[..b].iter().sum::<f64>(),
        values[b..b + m].iter().sum::<f64>(),
        values[b + m..].iter().sum::<f64>(),
    ];
    let mut best = 0;
    for i in 1..3 {
        if sums[i] > sums[best] {
            best = i;
        }
    }
    Some([Stage::B, Stage::M, Stage::E][best])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageAttribution {
    pub batch_size: u32,
    pub layer_count: usize,
    /// `false` when there are fewer than three layers and no split exists.
    pub split: bool,
    pub latency: Option<Stage>,
    pub alloc_memory: Option<Stage>,
    pub flops: Option<Stage>,
    pub memory_access: Option<Stage>,
}
