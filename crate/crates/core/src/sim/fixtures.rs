//! Built-in workloads.
//!
//! | name                 | shape                                                         |
//! |----------------------|---------------------------------------------------------------|
//! | `minimal`            | one layer, one kernel                                         |
//! | `resnet-like`        | 234 layers of Conv2D/Mul/Add/Relu blocks, mostly compute-bound |
//! | `mobilenet-like`     | 28 shallow layers, memory-bound                               |
//! | `overlap`            | two layers run concurrently unless serialized                 |
//! | `async-straggler`    | a kernel that keeps running after its layer returns           |
//! | `leveled-reference`  | 200 layers, 275.1 ms at batch 256, pairs with [`leveled_reference_overhead`] |

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{OverheadProfile, SimError, SyntheticKernel, SyntheticLayer, SyntheticModel};
use crate::span::KernelMetrics;

pub const NAMES: [&str; 6] =
    ["minimal", "resnet-like", "mobilenet-like", "overlap", "async-straggler", "leveled-reference"];

pub fn builtin(name: &str) -> Result<SyntheticModel, SimError> {
    Ok(match name {
        "minimal" => minimal(),
        "resnet-like" => resnet_like(),
        "mobilenet-like" => mobilenet_like(),
        "overlap" => overlap(),
        "async-straggler" => async_straggler(),
        "leveled-reference" => leveled_reference(),
        other => return Err(SimError::UnknownFixture(other.to_owned())),
    })
}

/// Overhead profile that takes `leveled-reference` from 275.1 ms to
/// 432.1 ms with layer profiling and 490.3 ms with kernel profiling.
pub fn leveled_reference_overhead() -> OverheadProfile {
    OverheadProfile { layer_overhead_ns: 785_000, kernel_overhead_ns: 40_000, metric_overhead_multiplier: 0.25 }
}

/// Default overhead used by the `simulate` command for a fixture.
pub fn suggested_overhead(name: &str) -> OverheadProfile {
    match name {
        "leveled-reference" => leveled_reference_overhead(),
        _ => OverheadProfile { layer_overhead_ns: 12_000, kernel_overhead_ns: 3_000, metric_overhead_multiplier: 0.5 },
    }
}

fn metrics(flops: f64, read: f64, write: f64, occupancy: f64) -> KernelMetrics {
    KernelMetrics {
        flop_count_sp: flops.round(),
        dram_read_bytes: read.round(),
        dram_write_bytes: write.round(),
        achieved_occupancy: occupancy,
    }
}

fn kernel(name: &str, latency: u64, launch: u64, m: KernelMetrics) -> SyntheticKernel {
    SyntheticKernel { name: name.into(), true_latency_ns: latency, launch_latency_ns: launch, metrics: m }
}

fn layer(name: String, layer_type: &str, true_latency_ns: u64, alloc_bytes: u64, kernels: Vec<SyntheticKernel>) -> SyntheticLayer {
    SyntheticLayer {
        name,
        layer_type: layer_type.into(),
        shape: None,
        true_latency_ns,
        alloc_bytes,
        concurrent: false,
        kernels,
    }
}

/// Layer latency: launches and kernels back to back, plus host time.
fn fit(kernels: &[SyntheticKernel], host_ns: u64) -> u64 {
    kernels.iter().map(|k| k.launch_latency_ns + k.true_latency_ns).sum::<u64>() + host_ns
}

fn minimal() -> SyntheticModel {
    let k = kernel("volta_sgemm_128x64_nn", 40_000, 3_000, metrics(4.0e8, 1_048_576.0, 524_288.0, 0.42));
    SyntheticModel {
        name: "minimal".into(),
        reference_batch: 1,
        scaling: Default::default(),
        layers: vec![SyntheticLayer {
            shape: Some("<1, 1024>".into()),
            ..layer("dense/MatMul".into(), "MatMul", 60_000, 4_194_304, vec![k])
        }],
    }
}

const CONV_KERNELS: [&str; 5] = [
    "volta_scudnn_128x64_relu_interior_nn_v1",
    "volta_cgemm_32x32_tn",
    "volta_scudnn_128x128_stridedB_splitK_interior_nn_v1",
    "volta_sgemm_128x64_nn",
    "flip_filter",
];

fn compute_bound(rng: &mut ChaCha8Rng, name: &str, latency: u64) -> SyntheticKernel {
    let flops = latency as f64 * rng.gen_range(4_000.0..12_000.0);
    let bytes = flops / rng.gen_range(30.0..900.0);
    let split = rng.gen_range(0.3..0.7);
    let occ = (rng.gen_range(0.1..0.6f64) * 1e4).round() / 1e4;
    kernel(name, latency, rng.gen_range(4_000..8_000), metrics(flops, bytes * split, bytes * (1.0 - split), occ))
}

fn memory_bound(rng: &mut ChaCha8Rng, name: &str, latency: u64) -> SyntheticKernel {
    let bytes = latency as f64 * rng.gen_range(300.0..800.0);
    let flops = bytes * rng.gen_range(0.05..2.0);
    let occ = (rng.gen_range(0.4..0.95f64) * 1e4).round() / 1e4;
    kernel(name, latency, rng.gen_range(3_000..6_000), metrics(flops, bytes * 0.5, bytes * 0.5, occ))
}

fn resnet_like() -> SyntheticModel {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut layers = Vec::new();
    let mut channels = 64;
    for block in 0..58 {
        if block > 0 && block % 15 == 0 {
            channels *= 2;
        }
        let suffix = if block == 0 { String::new() } else { format!("_{block}") };
        let n = rng.gen_range(1..=3);
        let kernels: Vec<SyntheticKernel> = (0..n)
            .map(|_| {
                let name = CONV_KERNELS[rng.gen_range(0..CONV_KERNELS.len())];
                let latency = rng.gen_range(60_000..2_500_000);
                compute_bound(&mut rng, name, latency)
            })
            .collect();
        let conv_lat = fit(&kernels, rng.gen_range(8_000..60_000));
        layers.push(SyntheticLayer {
            shape: Some(format!("<1, {channels}, 7, 7>")),
            ..layer(format!("conv2d{suffix}/Conv2D"), "Conv2D", conv_lat, rng.gen_range(1..30) << 20, kernels)
        });
        for (ty, op, kname) in [
            ("Mul", "mul", "eigen_scalar_product_op"),
            ("Add", "add", "eigen_scalar_sum_op"),
            ("Relu", "relu", "eigen_scalar_max_op"),
        ] {
            let latency = rng.gen_range(8_000..400_000);
            let k = memory_bound(&mut rng, kname, latency);
            let lat = fit(std::slice::from_ref(&k), rng.gen_range(5_000..40_000));
            layers.push(layer(format!("{op}{suffix}/{ty}"), ty, lat, rng.gen_range(1..9) << 19, vec![k]));
        }
    }
    layers.push(layer("flatten/Reshape".into(), "Reshape", 9_000, 0, vec![]));
    let k = compute_bound(&mut rng, "volta_sgemm_32x32_sliced1x4_tn", 90_000);
    let lat = fit(std::slice::from_ref(&k), 20_000);
    layers.push(layer("dense/MatMul".into(), "MatMul", lat, 8 << 20, vec![k]));
    SyntheticModel { name: "resnet-like".into(), reference_batch: 1, scaling: Default::default(), layers }
}

fn mobilenet_like() -> SyntheticModel {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut layers = Vec::new();
    for block in 0..7 {
        let latency = rng.gen_range(20_000..150_000);
        let k = memory_bound(&mut rng, "depthwise_conv2d_kernel", latency);
        let lat = fit(std::slice::from_ref(&k), rng.gen_range(5_000..30_000));
        layers.push(layer(format!("depthwise_{block}/DepthwiseConv2dNative"), "DepthwiseConv2dNative", lat, 2 << 20, vec![k]));
        for (i, ty) in [(0, "Relu6"), (1, "Conv2D"), (2, "Relu6")] {
            let name = if ty == "Conv2D" { "volta_sgemm_64x32_sliced1x4_nn" } else { "eigen_clamp_op" };
            let latency = rng.gen_range(10_000..120_000);
            let k = memory_bound(&mut rng, name, latency);
            let lat = fit(std::slice::from_ref(&k), rng.gen_range(5_000..30_000));
            layers.push(layer(format!("{}_{block}_{i}/{ty}", ty.to_ascii_lowercase()), ty, lat, 1 << 20, vec![k]));
        }
    }
    SyntheticModel { name: "mobilenet-like".into(), reference_batch: 1, scaling: Default::default(), layers }
}

fn overlap() -> SyntheticModel {
    let m = |f: f64| metrics(f, f / 40.0, f / 80.0, 0.5);
    let k = |name: &str| kernel(name, 20_000, 2_000, m(2.0e8));
    let mut b = layer("branch_b/Conv2D".into(), "Conv2D", 100_000, 1 << 20, vec![k("branch_b_gemm"), k("branch_b_bias")]);
    b.concurrent = true;
    SyntheticModel {
        name: "overlap".into(),
        reference_batch: 1,
        scaling: Default::default(),
        layers: vec![
            layer("stem/Conv2D".into(), "Conv2D", 40_000, 1 << 20, vec![k("stem_gemm")]),
            layer("branch_a/Conv2D".into(), "Conv2D", 100_000, 1 << 20, vec![k("branch_a_gemm"), k("branch_a_bias")]),
            b,
            layer("concat/ConcatV2".into(), "ConcatV2", 60_000, 2 << 20, vec![k("concat_kernel")]),
        ],
    }
}

fn async_straggler() -> SyntheticModel {
    let m = metrics(1.6e9, 8.0e6, 4.0e6, 0.35);
    SyntheticModel {
        name: "async-straggler".into(),
        reference_batch: 1,
        scaling: Default::default(),
        layers: vec![
            layer("conv_a/Conv2D".into(), "Conv2D", 30_000, 4 << 20, vec![kernel("slow_gemm", 80_000, 3_000, m)]),
            layer("relu_a/Relu".into(), "Relu", 20_000, 1 << 20, vec![kernel("relu_kernel", 5_000, 2_000, metrics(1.0e6, 4.0e6, 4.0e6, 0.8))]),
            layer("pool/MaxPool".into(), "MaxPool", 200_000, 1 << 20, vec![kernel("pool_kernel", 30_000, 3_000, metrics(2.0e6, 8.0e6, 2.0e6, 0.6))]),
        ],
    }
}

fn leveled_reference() -> SyntheticModel {
    const LAUNCH: u64 = 5_000;
    const HOST: u64 = 467_250;
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let mut layers = Vec::new();
    let first: Vec<SyntheticKernel> =
        (0..3).map(|_| compute_bound_fixed(&mut rng, "volta_scudnn_128x64_relu_interior_nn_v1", 160_000, LAUNCH)).collect();
    layers.push(layer("conv2d/Conv2D".into(), "Conv2D", fit(&first, HOST), 9 << 20, first));
    let types = ["Conv2D", "Mul", "Add", "Relu"];
    for i in 1..200usize {
        let ty = types[i % 4];
        let n = if i <= 128 { 2 } else { 1 };
        let kernels: Vec<SyntheticKernel> = (0..n)
            .map(|j| {
                let latency = if i == 199 && j == n - 1 { 549_912 } else { 548_988 };
                if ty == "Conv2D" {
                    compute_bound_fixed(&mut rng, "volta_sgemm_128x64_nn", latency, LAUNCH)
                } else {
                    let mut k = memory_bound(&mut rng, "eigen_elementwise_op", latency);
                    k.launch_latency_ns = LAUNCH;
                    k
                }
            })
            .collect();
        let lat = fit(&kernels, HOST);
        layers.push(layer(format!("{}_{i}/{ty}", ty.to_ascii_lowercase()), ty, lat, rng.gen_range(1..16) << 20, kernels));
    }
    SyntheticModel { name: "leveled-reference".into(), reference_batch: 256, scaling: Default::default(), layers }
}

fn compute_bound_fixed(rng: &mut ChaCha8Rng, name: &str, latency: u64, launch: u64) -> SyntheticKernel {
    let mut k = compute_bound(rng, name, latency);
    k.launch_latency_ns = launch;
    k
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes() {
        let r = builtin("resnet-like").unwrap();
        assert_eq!(r.layers.len(), 234);
        for ty in ["Conv2D", "Mul", "Add", "Relu"] {
            assert!(r.layers.iter().any(|l| l.layer_type == ty));
        }
        let l = builtin("leveled-reference").unwrap();
        assert_eq!(l.layers.len(), 200);
        assert_eq!(l.kernel_count(), 330);
        assert_eq!(l.layers.iter().map(|l| l.true_latency_ns).sum::<u64>(), 275_100_000);
        assert_eq!(l.layers[0].kernels.len(), 3);
        assert!(builtin("nope").is_err());
    }
}
