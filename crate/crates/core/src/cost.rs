//! Analytic cost accounting: learnable parameters, FLOPs (optionally up to a
//! tap), and the peak activation footprint of a liveness-aware schedule.
//!
//! FLOP convention: one multiply-accumulate counts as two FLOPs.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::arch::{ArchGraph, LayerKind, Source};
use crate::error::Result;
use crate::tensor::Shape;

/// Bytes per stored activation value.
pub const ACTIVATION_BYTES: u64 = 4;

/// Learnable parameters: conv weights and biases, batch-norm γ and β.
pub fn count_params(graph: &ArchGraph) -> u64 {
    graph
        .layers()
        .iter()
        .map(|l| match l.kind {
            LayerKind::Conv { bias, .. } => {
                let g = l.kind.conv_geometry().unwrap();
                (g.weight_len() + if bias { g.out_channels } else { 0 }) as u64
            }
            LayerKind::BatchNorm { channels, .. } => 2 * channels as u64,
            _ => 0,
        })
        .sum()
}

/// Non-learnable buffers: batch-norm running mean and variance.
pub fn count_running_stats(graph: &ArchGraph) -> u64 {
    graph
        .layers()
        .iter()
        .map(|l| match l.kind {
            LayerKind::BatchNorm { channels, .. } => 2 * channels as u64,
            _ => 0,
        })
        .sum()
}

fn layer_flops(kind: &LayerKind, out: Shape) -> u64 {
    let elems = out.len() as u64;
    match kind {
        LayerKind::Conv { .. } => {
            let g = kind.conv_geometry().unwrap();
            2 * (g.kernel.0 * g.kernel.1 * g.in_channels) as u64 * elems
        }
        LayerKind::Relu | LayerKind::Add => elems,
        LayerKind::BatchNorm { .. } => 2 * elems,
        LayerKind::MaxPool { window, .. } | LayerKind::AvgPool { window, .. } => {
            (window * window) as u64 * elems
        }
        LayerKind::Concat => 0,
    }
}

/// FLOPs of a forward pass at `input`. With `up_to`, only the layers the tap
/// depends on are counted, i.e. the forward pass truncated at that tap.
pub fn count_flops(graph: &ArchGraph, input: Shape, up_to: Option<usize>) -> Result<u64> {
    let shapes = graph.infer_shapes(input)?;
    let needed = match up_to {
        Some(ordinal) => graph.ancestors(&[graph.tap_layer(ordinal)?]),
        None => vec![true; shapes.len()],
    };
    Ok(graph
        .layers()
        .iter()
        .zip(&shapes)
        .zip(&needed)
        .filter(|(_, &n)| n)
        .map(|((l, &s), _)| layer_flops(&l.kind, s))
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationMemory {
    /// Largest simultaneously live set of layer outputs, in bytes.
    pub peak_bytes: u64,
    /// Every layer output kept at once, in bytes.
    pub total_bytes: u64,
}

/// Activation footprint of executing the graph in topological order and
/// freeing each output right after its last consumer ran. The input image is
/// not counted.
pub fn activation_memory(graph: &ArchGraph, input: Shape) -> Result<ActivationMemory> {
    let shapes = graph.infer_shapes(input)?;
    let n = shapes.len();
    let mut last_use: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        for src in graph.sources(i) {
            if let Source::Layer(j) = *src {
                last_use[j] = Some(i);
            }
        }
    }
    let bytes = |i: usize| shapes[i].len() as u64 * ACTIVATION_BYTES;
    let mut live = 0u64;
    let mut peak = 0u64;
    for i in 0..n {
        live += bytes(i);
        peak = peak.max(live);
        for j in 0..=i {
            if last_use[j] == Some(i) || (j == i && last_use[i].is_none() && i + 1 < n) {
                live -= bytes(j);
            }
        }
    }
    Ok(ActivationMemory {
        peak_bytes: peak,
        total_bytes: (0..n).map(bytes).sum(),
    })
}

/// One row of the architecture cost table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub arch: String,
    pub input_size: usize,
    pub params_millions: f64,
    pub flops_giga: f64,
    /// Tap ordinal the truncated FLOP count stops at.
    pub up_to_tap: usize,
    pub flops_giga_up_to_tap: f64,
    pub activation_mem_gb: f64,
    /// Median forward time; filled in by the timing harness.
    pub forward_ms: Option<f64>,
}

/// Analytic part of a [`CostReport`] for a square `size`×`size` input,
/// truncating at `up_to_tap` (typically the style default).
pub fn cost_report(graph: &ArchGraph, size: usize, up_to_tap: usize) -> Result<CostReport> {
    let input = Shape::new(3, size, size);
    graph.check_input(input)?;
    Ok(CostReport {
        arch: graph.name().as_str().into(),
        input_size: size,
        params_millions: count_params(graph) as f64 / 1e6,
        flops_giga: count_flops(graph, input, None)? as f64 / 1e9,
        up_to_tap,
        flops_giga_up_to_tap: count_flops(graph, input, Some(up_to_tap))? as f64 / 1e9,
        activation_mem_gb: activation_memory(graph, input)?.peak_bytes as f64 / 1e9,
        forward_ms: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_arch, ArchName, LayerSpec, TapRegistry};
    use alloc::string::ToString;

    fn spec(id: &str, kind: LayerKind, inputs: &[&str]) -> LayerSpec {
        LayerSpec {
            id: id.into(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn conv(cin: usize, cout: usize, k: usize, bias: bool) -> LayerKind {
        LayerKind::Conv {
            in_channels: cin,
            out_channels: cout,
            kernel: (k, k),
            stride: 1,
            padding: (k / 2, k / 2),
            bias,
        }
    }

    fn graph(layers: Vec<LayerSpec>, taps: &[&str]) -> ArchGraph {
        let taps = TapRegistry::new(taps.iter().map(|s| s.to_string()).collect());
        ArchGraph::new(ArchName::TinyVgg, layers, taps, 4).unwrap()
    }

    #[test]
    fn single_conv_params_and_memory() {
        let g = graph(vec![spec("c", conv(3, 8, 3, true), &["input"])], &["c"]);
        assert_eq!(count_params(&g), 224);
        let mem = activation_memory(&g, Shape::new(3, 64, 64)).unwrap();
        assert_eq!(mem.peak_bytes, 8 * 64 * 64 * ACTIVATION_BYTES);
    }

    #[test]
    fn empty_graph_has_no_params() {
        let g = ArchGraph::new(ArchName::TinyVgg, vec![], TapRegistry::new(vec![]), 1).unwrap();
        assert_eq!(count_params(&g), 0);
        assert_eq!(count_flops(&g, Shape::new(3, 4, 4), None).unwrap(), 0);
    }

    #[test]
    fn pointwise_conv_flops() {
        let layers = vec![
            spec("gray", conv(3, 1, 1, false), &["input"]),
            spec("c", conv(1, 1, 1, false), &["gray"]),
        ];
        let g = graph(layers, &["gray", "c"]);
        let full = count_flops(&g, Shape::new(3, 4, 4), None).unwrap();
        let first = count_flops(&g, Shape::new(3, 4, 4), Some(1)).unwrap();
        assert_eq!(full - first, 32);
    }

    #[test]
    fn chain_peak_is_largest_consecutive_pair() {
        let widths = [4usize, 16, 2, 9, 3];
        let mut layers = Vec::new();
        let mut prev = "input".to_string();
        let mut cin = 3;
        for (i, &w) in widths.iter().enumerate() {
            let id = alloc::format!("c{i}");
            layers.push(spec(&id, conv(cin, w, 1, false), &[&prev]));
            prev = id;
            cin = w;
        }
        let g = graph(layers, &[]);
        let plane = 5 * 5;
        let mem = activation_memory(&g, Shape::new(3, 5, 5)).unwrap();
        let pair = widths.windows(2).map(|p| (p[0] + p[1]) as u64).max().unwrap();
        assert_eq!(mem.peak_bytes, pair * plane * ACTIVATION_BYTES);
        assert_eq!(mem.total_bytes, 34 * plane * ACTIVATION_BYTES);
    }

    #[test]
    fn parallel_branches_are_live_together() {
        let layers = vec![
            spec("a", conv(3, 4, 1, false), &["input"]),
            spec("b", conv(3, 6, 1, false), &["input"]),
            spec("cat", LayerKind::Concat, &["a", "b"]),
        ];
        let g = graph(layers, &[]);
        let mem = activation_memory(&g, Shape::new(3, 2, 2)).unwrap();
        assert!(mem.peak_bytes >= (4 + 6) * 4 * ACTIVATION_BYTES);
        assert_eq!(mem.peak_bytes, (4 + 6 + 10) * 4 * ACTIVATION_BYTES);
    }

    #[test]
    fn deepest_tap_covers_sequential_graph() {
        let g = build_arch(ArchName::TinyVgg).unwrap();
        let input = Shape::new(3, 64, 64);
        assert_eq!(
            count_flops(&g, input, Some(4)).unwrap(),
            count_flops(&g, input, None).unwrap()
        );
    }

    #[test]
    fn parameter_goldens_within_two_percent() {
        for (name, golden) in [
            (ArchName::Vgg16, 14.71e6),
            (ArchName::Vgg19, 20.02e6),
            (ArchName::Resnet50, 23.51e6),
            (ArchName::Resnet101, 42.50e6),
            (ArchName::InceptionV3, 21.79e6),
        ] {
            let p = count_params(&build_arch(name).unwrap()) as f64;
            assert!((p / golden - 1.0).abs() < 0.02, "{name}: {p}");
        }
        assert_eq!(count_params(&build_arch(ArchName::TinyVgg).unwrap()), 4296);
    }

    #[test]
    fn vgg_flops_scale_with_area() {
        let g = build_arch(ArchName::Vgg16).unwrap();
        let f = |s: usize| count_flops(&g, Shape::new(3, s, s), None).unwrap() as f64;
        let (a, b, c) = (f(64), f(128), f(256));
        assert!((b / a - 4.0).abs() < 1e-9 && (c / b - 4.0).abs() < 1e-9);
    }

    #[test]
    fn resnets_agree_before_divergence() {
        let r50 = build_arch(ArchName::Resnet50).unwrap();
        let r101 = build_arch(ArchName::Resnet101).unwrap();
        let input = Shape::new(3, 224, 224);
        for tap in 1..=10 {
            assert_eq!(
                count_flops(&r50, input, Some(tap)).unwrap(),
                count_flops(&r101, input, Some(tap)).unwrap()
            );
        }
        assert!(count_flops(&r50, input, None).unwrap() < count_flops(&r101, input, None).unwrap());
    }
}
