//! Layer layouts of the supported backbones (feature extractors only; the
//! classification heads and Inception's auxiliary classifier are left out).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{ArchGraph, ArchName, LayerKind, LayerSpec, TapRegistry, FULL_TAP_COUNT, INPUT_ID};
use crate::error::Result;

pub fn build_arch(name: ArchName) -> Result<ArchGraph> {
    match name {
        ArchName::Vgg16 => vgg(name, &[2, 2, 3, 3, 3]),
        ArchName::Vgg19 => vgg(name, &[2, 2, 4, 4, 4]),
        ArchName::Resnet50 => resnet(name, &[3, 4, 6, 3]),
        ArchName::Resnet101 => resnet(name, &[3, 4, 23, 3]),
        ArchName::InceptionV3 => inception_v3(),
        ArchName::TinyVgg => tiny_vgg(),
        ArchName::TinyResnet => tiny_resnet(),
        ArchName::TinyInception => tiny_inception(),
    }
}

const RESNET_BN_EPS: f64 = 1e-5;
const INCEPTION_BN_EPS: f64 = 1e-3;

struct Builder {
    layers: Vec<LayerSpec>,
    channels: BTreeMap<String, usize>,
}

impl Builder {
    fn new() -> Self {
        let mut channels = BTreeMap::new();
        channels.insert(INPUT_ID.to_string(), super::INPUT_CHANNELS);
        Builder {
            layers: Vec::new(),
            channels,
        }
    }

    fn push(&mut self, id: String, kind: LayerKind, inputs: &[&str], channels: usize) -> String {
        self.channels.insert(id.clone(), channels);
        self.layers.push(LayerSpec {
            id: id.clone(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        });
        id
    }

    fn channels_of(&self, id: &str) -> usize {
        self.channels[id]
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        id: impl Into<String>,
        input: &str,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: (usize, usize),
        bias: bool,
    ) -> String {
        let kind = LayerKind::Conv {
            in_channels: self.channels_of(input),
            out_channels,
            kernel,
            stride,
            padding,
            bias,
        };
        self.push(id.into(), kind, &[input], out_channels)
    }

    fn relu(&mut self, id: impl Into<String>, input: &str) -> String {
        let c = self.channels_of(input);
        self.push(id.into(), LayerKind::Relu, &[input], c)
    }

    fn bn(&mut self, id: impl Into<String>, input: &str, eps: f64) -> String {
        let c = self.channels_of(input);
        self.push(id.into(), LayerKind::BatchNorm { channels: c, eps }, &[input], c)
    }

    fn max_pool(&mut self, id: impl Into<String>, input: &str, window: usize, stride: usize, padding: usize) -> String {
        let c = self.channels_of(input);
        let kind = LayerKind::MaxPool { window, stride, padding };
        self.push(id.into(), kind, &[input], c)
    }

    fn avg_pool(&mut self, id: impl Into<String>, input: &str, window: usize, stride: usize, padding: usize) -> String {
        let c = self.channels_of(input);
        let kind = LayerKind::AvgPool { window, stride, padding };
        self.push(id.into(), kind, &[input], c)
    }

    fn add(&mut self, id: impl Into<String>, a: &str, b: &str) -> String {
        let c = self.channels_of(a);
        self.push(id.into(), LayerKind::Add, &[a, b], c)
    }

    fn concat(&mut self, id: impl Into<String>, inputs: &[&str]) -> String {
        let c = inputs.iter().map(|i| self.channels_of(i)).sum();
        self.push(id.into(), LayerKind::Concat, inputs, c)
    }

    /// conv (no bias) → batchnorm → relu, the unit Inception and ResNet stems use.
    #[allow(clippy::too_many_arguments)]
    fn conv_bn_relu(
        &mut self,
        prefix: &str,
        input: &str,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: (usize, usize),
        eps: f64,
    ) -> String {
        let c = self.conv(format!("{prefix}.conv"), input, out_channels, kernel, stride, padding, false);
        let b = self.bn(format!("{prefix}.bn"), &c, eps);
        self.relu(format!("{prefix}.relu"), &b)
    }

    fn finish(self, name: ArchName, taps: Vec<String>, min_input: usize) -> Result<ArchGraph> {
        ArchGraph::new(name, self.layers, TapRegistry::new(taps), min_input)
    }
}

/// `blocks[i]` 3×3 conv+ReLU units at width 64·2^i (capped at 512), each
/// stage closed by a 2×2 max pool.
fn vgg(name: ArchName, blocks: &[usize]) -> Result<ArchGraph> {
    let mut b = Builder::new();
    let mut cur = INPUT_ID.to_string();
    let mut relus = Vec::new();
    for (stage, &n) in blocks.iter().enumerate() {
        let width = (64 << stage).min(512);
        for i in 1..=n {
            let c = b.conv(format!("conv{}_{i}", stage + 1), &cur, width, (3, 3), 1, (1, 1), true);
            cur = b.relu(format!("relu{}_{i}", stage + 1), &c);
            relus.push(cur.clone());
        }
        cur = b.max_pool(format!("pool{}", stage + 1), &cur, 2, 2, 0);
    }
    relus.truncate(FULL_TAP_COUNT);
    b.finish(name, relus, 64)
}

/// Bottleneck ResNet (stride on the 3×3 conv). Tap k is the output of the
/// k-th bottleneck block.
fn resnet(name: ArchName, stages: &[usize]) -> Result<ArchGraph> {
    let mut b = Builder::new();
    let c = b.conv("conv1", INPUT_ID, 64, (7, 7), 2, (3, 3), false);
    let n = b.bn("bn1", &c, RESNET_BN_EPS);
    let r = b.relu("relu", &n);
    let mut cur = b.max_pool("maxpool", &r, 3, 2, 1);

    let mut blocks = Vec::new();
    for (stage, &count) in stages.iter().enumerate() {
        let planes = 64 << stage;
        for i in 0..count {
            let stride = if i == 0 && stage > 0 { 2 } else { 1 };
            let p = format!("layer{}.{i}", stage + 1);
            let x = b.conv(format!("{p}.conv1"), &cur, planes, (1, 1), 1, (0, 0), false);
            let x = b.bn(format!("{p}.bn1"), &x, RESNET_BN_EPS);
            let x = b.relu(format!("{p}.relu1"), &x);
            let x = b.conv(format!("{p}.conv2"), &x, planes, (3, 3), stride, (1, 1), false);
            let x = b.bn(format!("{p}.bn2"), &x, RESNET_BN_EPS);
            let x = b.relu(format!("{p}.relu2"), &x);
            let x = b.conv(format!("{p}.conv3"), &x, planes * 4, (1, 1), 1, (0, 0), false);
            let x = b.bn(format!("{p}.bn3"), &x, RESNET_BN_EPS);
            let shortcut = if i == 0 {
                let d = b.conv(format!("{p}.downsample.0"), &cur, planes * 4, (1, 1), stride, (0, 0), false);
                b.bn(format!("{p}.downsample.1"), &d, RESNET_BN_EPS)
            } else {
                cur.clone()
            };
            let s = b.add(format!("{p}.add"), &x, &shortcut);
            cur = b.relu(format!("{p}.out"), &s);
            blocks.push(cur.clone());
        }
    }
    blocks.truncate(FULL_TAP_COUNT);
    b.finish(name, blocks, 64)
}

fn inception_v3() -> Result<ArchGraph> {
    const E: f64 = INCEPTION_BN_EPS;
    let mut b = Builder::new();
    let mut taps = Vec::new();

    let x = b.conv_bn_relu("Conv2d_1a_3x3", INPUT_ID, 32, (3, 3), 2, (0, 0), E);
    taps.push(x.clone());
    let x = b.conv_bn_relu("Conv2d_2a_3x3", &x, 32, (3, 3), 1, (0, 0), E);
    taps.push(x.clone());
    let x = b.conv_bn_relu("Conv2d_2b_3x3", &x, 64, (3, 3), 1, (1, 1), E);
    taps.push(x.clone());
    let x = b.max_pool("maxpool1", &x, 3, 2, 0);
    let x = b.conv_bn_relu("Conv2d_3b_1x1", &x, 80, (1, 1), 1, (0, 0), E);
    taps.push(x.clone());
    let x = b.conv_bn_relu("Conv2d_4a_3x3", &x, 192, (3, 3), 1, (0, 0), E);
    taps.push(x.clone());
    let mut x = b.max_pool("maxpool2", &x, 3, 2, 0);

    for (name, pool_features) in [("Mixed_5b", 32), ("Mixed_5c", 64), ("Mixed_5d", 64)] {
        x = inception_a(&mut b, name, &x, pool_features);
        taps.push(x.clone());
    }
    x = inception_b(&mut b, "Mixed_6a", &x);
    taps.push(x.clone());
    for (name, c7) in [("Mixed_6b", 128), ("Mixed_6c", 160), ("Mixed_6d", 160), ("Mixed_6e", 192)] {
        x = inception_c(&mut b, name, &x, c7);
        taps.push(x.clone());
    }
    x = inception_d(&mut b, "Mixed_7a", &x);
    taps.push(x.clone());
    for name in ["Mixed_7b", "Mixed_7c"] {
        x = inception_e(&mut b, name, &x);
        taps.push(x.clone());
    }
    taps.truncate(FULL_TAP_COUNT);
    b.finish(ArchName::InceptionV3, taps, 75)
}

fn inception_a(b: &mut Builder, p: &str, x: &str, pool_features: usize) -> String {
    const E: f64 = INCEPTION_BN_EPS;
    let b1 = b.conv_bn_relu(&format!("{p}.branch1x1"), x, 64, (1, 1), 1, (0, 0), E);
    let b5 = b.conv_bn_relu(&format!("{p}.branch5x5_1"), x, 48, (1, 1), 1, (0, 0), E);
    let b5 = b.conv_bn_relu(&format!("{p}.branch5x5_2"), &b5, 64, (5, 5), 1, (2, 2), E);
    let b3 = b.conv_bn_relu(&format!("{p}.branch3x3dbl_1"), x, 64, (1, 1), 1, (0, 0), E);
    let b3 = b.conv_bn_relu(&format!("{p}.branch3x3dbl_2"), &b3, 96, (3, 3), 1, (1, 1), E);
    let b3 = b.conv_bn_relu(&format!("{p}.branch3x3dbl_3"), &b3, 96, (3, 3), 1, (1, 1), E);
    let bp = b.avg_pool(format!("{p}.branch_pool.avg"), x, 3, 1, 1);
    let bp = b.conv_bn_relu(&format!("{p}.branch_pool"), &bp, pool_features, (1, 1), 1, (0, 0), E);
    b.concat(p, &[&b1, &b5, &b3, &bp])
}

fn inception_b(b: &mut Builder, p: &str, x: &str) -> String {
    const E: f64 = INCEPTION_BN_EPS;
    let b3 = b.conv_bn_relu(&format!("{p}.branch3x3"), x, 384, (3, 3), 2, (0, 0), E);
    let bd = b.conv_bn_relu(&format!("{p}.branch3x3dbl_1"), x, 64, (1, 1), 1, (0, 0), E);
    let bd = b.conv_bn_relu(&format!("{p}.branch3x3dbl_2"), &bd, 96, (3, 3), 1, (1, 1), E);
    let bd = b.conv_bn_relu(&format!("{p}.branch3x3dbl_3"), &bd, 96, (3, 3), 2, (0, 0), E);
    let bp = b.max_pool(format!("{p}.branch_pool"), x, 3, 2, 0);
    b.concat(p, &[&b3, &bd, &bp])
}

fn inception_c(b: &mut Builder, p: &str, x: &str, c7: usize) -> String {
    const E: f64 = INCEPTION_BN_EPS;
    let b1 = b.conv_bn_relu(&format!("{p}.branch1x1"), x, 192, (1, 1), 1, (0, 0), E);
    let b7 = b.conv_bn_relu(&format!("{p}.branch7x7_1"), x, c7, (1, 1), 1, (0, 0), E);
    let b7 = b.conv_bn_relu(&format!("{p}.branch7x7_2"), &b7, c7, (1, 7), 1, (0, 3), E);
    let b7 = b.conv_bn_relu(&format!("{p}.branch7x7_3"), &b7, 192, (7, 1), 1, (3, 0), E);
    let bd = b.conv_bn_relu(&format!("{p}.branch7x7dbl_1"), x, c7, (1, 1), 1, (0, 0), E);
    let bd = b.conv_bn_relu(&format!("{p}.branch7x7dbl_2"), &bd, c7, (7, 1), 1, (3, 0), E);
    let bd = b.conv_bn_relu(&format!("{p}.branch7x7dbl_3"), &bd, c7, (1, 7), 1, (0, 3), E);
    let bd = b.conv_bn_relu(&format!("{p}.branch7x7dbl_4"), &bd, c7, (7, 1), 1, (3, 0), E);
    let bd = b.conv_bn_relu(&format!("{p}.branch7x7dbl_5"), &bd, 192, (1, 7), 1, (0, 3), E);
    let bp = b.avg_pool(format!("{p}.branch_pool.avg"), x, 3, 1, 1);
    let bp = b.conv_bn_relu(&format!("{p}.branch_pool"), &bp, 192, (1, 1), 1, (0, 0), E);
    b.concat(p, &[&b1, &b7, &bd, &bp])
}

fn inception_d(b: &mut Builder, p: &str, x: &str) -> String {
    const E: f64 = INCEPTION_BN_EPS;
    let b3 = b.conv_bn_relu(&format!("{p}.branch3x3_1"), x, 192, (1, 1), 1, (0, 0), E);
    let b3 = b.conv_bn_relu(&format!("{p}.branch3x3_2"), &b3, 320, (3, 3), 2, (0, 0), E);
    let b7 = b.conv_bn_relu(&format!("{p}.branch7x7x3_1"), x, 192, (1, 1), 1, (0, 0), E);
    let b7 = b.conv_bn_relu(&format!("{p}.branch7x7x3_2"), &b7, 192, (1, 7), 1, (0, 3), E);
    let b7 = b.conv_bn_relu(&format!("{p}.branch7x7x3_3"), &b7, 192, (7, 1), 1, (3, 0), E);
    let b7 = b.conv_bn_relu(&format!("{p}.branch7x7x3_4"), &b7, 192, (3, 3), 2, (0, 0), E);
    let bp = b.max_pool(format!("{p}.branch_pool"), x, 3, 2, 0);
    b.concat(p, &[&b3, &b7, &bp])
}

fn inception_e(b: &mut Builder, p: &str, x: &str) -> String {
    const E: f64 = INCEPTION_BN_EPS;
    let b1 = b.conv_bn_relu(&format!("{p}.branch1x1"), x, 320, (1, 1), 1, (0, 0), E);
    let b3 = b.conv_bn_relu(&format!("{p}.branch3x3_1"), x, 384, (1, 1), 1, (0, 0), E);
    let b3a = b.conv_bn_relu(&format!("{p}.branch3x3_2a"), &b3, 384, (1, 3), 1, (0, 1), E);
    let b3b = b.conv_bn_relu(&format!("{p}.branch3x3_2b"), &b3, 384, (3, 1), 1, (1, 0), E);
    let bd = b.conv_bn_relu(&format!("{p}.branch3x3dbl_1"), x, 448, (1, 1), 1, (0, 0), E);
    let bd = b.conv_bn_relu(&format!("{p}.branch3x3dbl_2"), &bd, 384, (3, 3), 1, (1, 1), E);
    let bda = b.conv_bn_relu(&format!("{p}.branch3x3dbl_3a"), &bd, 384, (1, 3), 1, (0, 1), E);
    let bdb = b.conv_bn_relu(&format!("{p}.branch3x3dbl_3b"), &bd, 384, (3, 1), 1, (1, 0), E);
    let bp = b.avg_pool(format!("{p}.branch_pool.avg"), x, 3, 1, 1);
    let bp = b.conv_bn_relu(&format!("{p}.branch_pool"), &bp, 192, (1, 1), 1, (0, 0), E);
    b.concat(p, &[&b1, &b3a, &b3b, &bda, &bdb, &bp])
}

/// conv(3→8)-relu-conv(8→8)-relu-maxpool-conv(8→16)-relu-conv(16→16)-relu.
fn tiny_vgg() -> Result<ArchGraph> {
    let mut b = Builder::new();
    let mut taps = Vec::new();
    let c = b.conv("conv1", INPUT_ID, 8, (3, 3), 1, (1, 1), true);
    let r = b.relu("relu1", &c);
    taps.push(r.clone());
    let c = b.conv("conv2", &r, 8, (3, 3), 1, (1, 1), true);
    let r = b.relu("relu2", &c);
    taps.push(r.clone());
    let p = b.max_pool("pool1", &r, 2, 2, 0);
    let c = b.conv("conv3", &p, 16, (3, 3), 1, (1, 1), true);
    let r = b.relu("relu3", &c);
    taps.push(r.clone());
    let c = b.conv("conv4", &r, 16, (3, 3), 1, (1, 1), true);
    let r = b.relu("relu4", &c);
    taps.push(r);
    b.finish(ArchName::TinyVgg, taps, 8)
}

/// Stem conv plus three identity residual blocks of width 8.
fn tiny_resnet() -> Result<ArchGraph> {
    let mut b = Builder::new();
    let mut cur = b.conv_bn_relu("stem", INPUT_ID, 8, (3, 3), 1, (1, 1), RESNET_BN_EPS);
    let mut taps = alloc::vec![cur.clone()];
    for i in 1..=3 {
        let p = format!("block{i}");
        let x = b.conv_bn_relu(&format!("{p}.a"), &cur, 8, (3, 3), 1, (1, 1), RESNET_BN_EPS);
        let x = b.conv(format!("{p}.b.conv"), &x, 8, (3, 3), 1, (1, 1), false);
        let x = b.bn(format!("{p}.b.bn"), &x, RESNET_BN_EPS);
        let s = b.add(format!("{p}.add"), &x, &cur);
        cur = b.relu(format!("{p}.out"), &s);
        taps.push(cur.clone());
    }
    b.finish(ArchName::TinyResnet, taps, 8)
}

/// Stem conv plus two two-branch modules joined by channel concatenation.
fn tiny_inception() -> Result<ArchGraph> {
    let mut b = Builder::new();
    let c = b.conv("stem.conv", INPUT_ID, 8, (3, 3), 1, (1, 1), true);
    let stem = b.relu("stem.relu", &c);

    let a = b.conv("mix1.a.conv", &stem, 4, (1, 1), 1, (0, 0), true);
    let a = b.relu("mix1.a.relu", &a);
    let d = b.conv("mix1.b.reduce", &stem, 4, (1, 1), 1, (0, 0), true);
    let d = b.relu("mix1.b.reduce_relu", &d);
    let d = b.conv("mix1.b.conv", &d, 8, (3, 3), 1, (1, 1), true);
    let d = b.relu("mix1.b.relu", &d);
    let m1 = b.concat("mix1", &[&a, &d]);

    let a = b.conv("mix2.a.conv", &m1, 8, (1, 1), 1, (0, 0), true);
    let a = b.relu("mix2.a.relu", &a);
    let p = b.avg_pool("mix2.b.pool", &m1, 3, 1, 1);
    let p = b.conv("mix2.b.conv", &p, 8, (1, 1), 1, (0, 0), true);
    let p = b.relu("mix2.b.relu", &p);
    let m2 = b.concat("mix2", &[&a, &p]);

    b.finish(ArchName::TinyInception, alloc::vec![stem, m1, m2], 8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn every_arch_builds_with_valid_taps() {
        for name in ArchName::ALL {
            let g = build_arch(name).unwrap();
            let taps = g.taps();
            if name.is_tiny() {
                assert!(taps.len() < FULL_TAP_COUNT);
            } else {
                assert_eq!(taps.len(), FULL_TAP_COUNT, "{name}");
                assert_eq!((taps.content_default(), taps.style_default()), (2, 8));
            }
            for k in 1..=taps.len() {
                g.tap_layer(k).unwrap();
            }
        }
    }

    #[test]
    fn minimum_inputs_are_enforced() {
        let inception = build_arch(ArchName::InceptionV3).unwrap();
        assert!(inception.check_input(Shape::new(3, 75, 75)).is_ok());
        assert!(inception.check_input(Shape::new(3, 74, 74)).is_err());
        let vgg = build_arch(ArchName::Vgg16).unwrap();
        assert!(vgg.check_input(Shape::new(3, 64, 64)).is_ok());
        assert!(vgg.check_input(Shape::new(3, 32, 32)).is_err());
    }

    #[test]
    fn feature_widths_match_published_layouts() {
        let shapes = |name| {
            let g = build_arch(name).unwrap();
            let s = g.infer_shapes(Shape::new(3, 224, 224)).unwrap();
            *s.last().unwrap()
        };
        assert_eq!(shapes(ArchName::Vgg16), Shape::new(512, 7, 7));
        assert_eq!(shapes(ArchName::Resnet50), Shape::new(2048, 7, 7));
        let g = build_arch(ArchName::InceptionV3).unwrap();
        let s = g.infer_shapes(Shape::new(3, 299, 299)).unwrap();
        assert_eq!(*s.last().unwrap(), Shape::new(2048, 8, 8));
    }

    #[test]
    fn tiny_vgg_layout() {
        let g = build_arch(ArchName::TinyVgg).unwrap();
        let convs = g.layers().iter().filter(|l| matches!(l.kind, LayerKind::Conv { .. })).count();
        assert_eq!(convs, 4);
        assert_eq!(g.taps().len(), 4);
        let s = g.infer_shapes(Shape::new(3, 64, 64)).unwrap();
        assert_eq!(*s.last().unwrap(), Shape::new(16, 32, 32));
    }
}
