//! Backbones as declarative layer DAGs, their tap registries, weights, and the
//! tapped forward/backward executor.

mod exec;
mod normalize;
mod weights;
mod zoo;

pub use exec::{Tape, TappedForward};
pub use normalize::{denormalize, normalize_input, IMAGENET_MEAN, IMAGENET_STD};
pub use weights::{
    decode_weight_file, encode_weight_file, init_weights, weights_from_entries, LayerWeights, WeightEntry, WeightScheme,
    WeightSet, WeightedGraph, WEIGHT_FILE_MAGIC,
};
pub use zoo::build_arch;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Conv2d, Pool2d, PoolKind, Shape};

/// Identifier a layer uses to consume the graph's input image.
pub const INPUT_ID: &str = "input";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchName {
    Vgg16,
    Vgg19,
    Resnet50,
    Resnet101,
    InceptionV3,
    TinyVgg,
    TinyResnet,
    TinyInception,
}

impl ArchName {
    pub const ALL: [ArchName; 8] = [
        ArchName::Vgg16,
        ArchName::Vgg19,
        ArchName::Resnet50,
        ArchName::Resnet101,
        ArchName::InceptionV3,
        ArchName::TinyVgg,
        ArchName::TinyResnet,
        ArchName::TinyInception,
    ];

    /// The five full-size backbones.
    pub const FULL: [ArchName; 5] = [
        ArchName::Vgg16,
        ArchName::Vgg19,
        ArchName::Resnet50,
        ArchName::Resnet101,
        ArchName::InceptionV3,
    ];

    pub const fn as_str(self) -> &'static str {
        match self {
            ArchName::Vgg16 => "vgg16",
            ArchName::Vgg19 => "vgg19",
            ArchName::Resnet50 => "resnet50",
            ArchName::Resnet101 => "resnet101",
            ArchName::InceptionV3 => "inception_v3",
            ArchName::TinyVgg => "tiny_vgg",
            ArchName::TinyResnet => "tiny_resnet",
            ArchName::TinyInception => "tiny_inception",
        }
    }

    pub const fn is_tiny(self) -> bool {
        matches!(
            self,
            ArchName::TinyVgg | ArchName::TinyResnet | ArchName::TinyInception
        )
    }
}

impl fmt::Display for ArchName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchName::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = ArchName::ALL.iter().map(|a| a.as_str()).collect();
                Error::config(
                    "arch",
                    format!("unknown architecture `{s}`; valid names: {}", valid.join(", ")),
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: (usize, usize),
        bias: bool,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
        padding: usize,
    },
    AvgPool {
        window: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        channels: usize,
        eps: f64,
    },
    Add,
    Concat,
}

impl LayerKind {
    pub fn conv_geometry(&self) -> Option<Conv2d> {
        match *self {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => Some(Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            }),
            _ => None,
        }
    }

    pub fn pool(&self) -> Option<Pool2d> {
        match *self {
            LayerKind::MaxPool {
                window,
                stride,
                padding,
            } => Some(Pool2d::new(PoolKind::Max, window, stride).padded(padding)),
            LayerKind::AvgPool {
                window,
                stride,
                padding,
            } => Some(Pool2d::new(PoolKind::Avg, window, stride).padded(padding)),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::AvgPool { .. } => "avgpool",
            LayerKind::BatchNorm { .. } => "batchnorm",
            LayerKind::Add => "add",
            LayerKind::Concat => "concat",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            LayerKind::Add => Some(2),
            LayerKind::Concat => None,
            _ => Some(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    pub inputs: Vec<String>,
}

/// Maps the ordinals used by experiment configs ("Layer 1" … "Layer N") to
/// layer ids, shallow to deep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapRegistry {
    layers: Vec<String>,
    content_default: usize,
    style_default: usize,
}

/// Number of ordinals the full-size registries expose.
pub const FULL_TAP_COUNT: usize = 10;

impl TapRegistry {
    /// A registry whose defaults are the projections of ordinals 2 (content)
    /// and 8 (style).
    pub fn new(layers: Vec<String>) -> Self {
        let mut reg = TapRegistry {
            layers,
            content_default: 0,
            style_default: 0,
        };
        reg.content_default = reg.project(2);
        reg.style_default = reg.project(8);
        reg
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn content_default(&self) -> usize {
        self.content_default
    }

    pub fn style_default(&self) -> usize {
        self.style_default
    }

    pub fn layer_ids(&self) -> &[String] {
        &self.layers
    }

    /// Layer id for a 1-based ordinal.
    pub fn resolve(&self, ordinal: usize) -> Result<&str> {
        if ordinal == 0 || ordinal > self.layers.len() {
            return Err(Error::config(
                format!("tap {ordinal}"),
                format!(
                    "graph exposes taps 1..={}; tap {ordinal} does not exist",
                    self.layers.len()
                ),
            ));
        }
        Ok(&self.layers[ordinal - 1])
    }

    /// Maps an ordinal on the 1..=10 scale of the full-size registries onto
    /// this registry: identity when the registry has at least ten taps,
    /// otherwise `ceil(k * len / 10)`, which keeps shallow/mid/deep order.
    pub fn project(&self, ordinal: usize) -> usize {
        let n = self.layers.len();
        if n >= FULL_TAP_COUNT || n == 0 {
            ordinal
        } else {
            (ordinal * n).div_ceil(FULL_TAP_COUNT).clamp(1, n)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Source {
    Input,
    Layer(usize),
}

/// A backbone's layer DAG in topological order plus its tap registry.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchGraph {
    name: ArchName,
    layers: Vec<LayerSpec>,
    taps: TapRegistry,
    min_input: usize,
    sources: Vec<Vec<Source>>,
    index: BTreeMap<String, usize>,
}

/// Serializable form of an [`ArchGraph`], used for JSON export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDescription {
    pub name: ArchName,
    pub min_input: usize,
    pub layers: Vec<LayerSpec>,
    pub taps: TapRegistry,
}

/// Number of channels every graph consumes.
pub const INPUT_CHANNELS: usize = 3;

impl ArchGraph {
    pub fn new(
        name: ArchName,
        layers: Vec<LayerSpec>,
        taps: TapRegistry,
        min_input: usize,
    ) -> Result<Self> {
        let mut index = BTreeMap::new();
        let mut sources = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            if layer.id == INPUT_ID {
                return Err(Error::config(&layer.id, "`input` is a reserved id"));
            }
            if let Some(arity) = layer.kind.arity() {
                if layer.inputs.len() != arity {
                    return Err(Error::config(
                        &layer.id,
                        format!("{} takes {arity} input(s), got {}", layer.kind.name(), layer.inputs.len()),
                    ));
                }
            } else if layer.inputs.is_empty() {
                return Err(Error::config(&layer.id, "concat needs at least one input"));
            }
            let mut srcs = Vec::with_capacity(layer.inputs.len());
            for input in &layer.inputs {
                if input == INPUT_ID {
                    srcs.push(Source::Input);
                } else {
                    // Only earlier layers are visible, which rules out cycles.
                    let &j = index.get(input).ok_or_else(|| {
                        Error::config(
                            &layer.id,
                            format!("input `{input}` is not defined before this layer"),
                        )
                    })?;
                    srcs.push(Source::Layer(j));
                }
            }
            if index.insert(layer.id.clone(), i).is_some() {
                return Err(Error::config(&layer.id, "duplicate layer id"));
            }
            sources.push(srcs);
        }
        let mut last_depth = None;
        for (k, id) in taps.layers.iter().enumerate() {
            let &depth = index
                .get(id)
                .ok_or_else(|| Error::config(format!("tap {}", k + 1), format!("unknown layer `{id}`")))?;
            if last_depth.is_some_and(|d| depth <= d) {
                return Err(Error::config(
                    format!("tap {}", k + 1),
                    "tap ordinals must increase with depth",
                ));
            }
            last_depth = Some(depth);
        }
        let graph = ArchGraph {
            name,
            layers,
            taps,
            min_input,
            sources,
            index,
        };
        graph.infer_shapes(Shape::new(INPUT_CHANNELS, min_input, min_input))?;
        Ok(graph)
    }

    pub fn from_description(desc: GraphDescription) -> Result<Self> {
        ArchGraph::new(desc.name, desc.layers, desc.taps, desc.min_input)
    }

    pub fn describe(&self) -> GraphDescription {
        GraphDescription {
            name: self.name,
            min_input: self.min_input,
            layers: self.layers.clone(),
            taps: self.taps.clone(),
        }
    }

    pub fn name(&self) -> ArchName {
        self.name
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn taps(&self) -> &TapRegistry {
        &self.taps
    }

    pub fn min_input(&self) -> usize {
        self.min_input
    }

    pub fn layer_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub(crate) fn sources(&self, layer: usize) -> &[Source] {
        &self.sources[layer]
    }

    /// Layer index behind a tap ordinal.
    pub fn tap_layer(&self, ordinal: usize) -> Result<usize> {
        let id = self.taps.resolve(ordinal)?;
        self.layer_index(id)
            .ok_or_else(|| Error::Internal(format!("tap layer `{id}` missing from graph")))
    }

    /// Which layers must execute to produce the given layers' outputs.
    pub fn ancestors(&self, targets: &[usize]) -> Vec<bool> {
        let mut needed = alloc::vec![false; self.layers.len()];
        for &t in targets {
            needed[t] = true;
        }
        for i in (0..self.layers.len()).rev() {
            if needed[i] {
                for src in &self.sources[i] {
                    if let Source::Layer(j) = *src {
                        needed[j] = true;
                    }
                }
            }
        }
        needed
    }

    /// Output shape of every layer for an input of the given shape.
    pub fn infer_shapes(&self, input: Shape) -> Result<Vec<Shape>> {
        if input.channels != INPUT_CHANNELS {
            return Err(Error::config(
                INPUT_ID,
                format!("graphs take {INPUT_CHANNELS}-channel images, got {}", input.channels),
            ));
        }
        let mut shapes: Vec<Shape> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let ins: Vec<Shape> = self.sources[i]
                .iter()
                .map(|s| match *s {
                    Source::Input => input,
                    Source::Layer(j) => shapes[j],
                })
                .collect();
            let shape = layer_output_shape(&layer.kind, &ins).map_err(|e| e.in_layer(&layer.id))?;
            shapes.push(shape);
        }
        Ok(shapes)
    }

    /// Rejects inputs smaller than the graph's minimum size.
    pub fn check_input(&self, input: Shape) -> Result<()> {
        if input.height < self.min_input || input.width < self.min_input {
            return Err(Error::config(
                self.name.as_str(),
                format!(
                    "input {}x{} below the minimum {}x{}",
                    input.height, input.width, self.min_input, self.min_input
                ),
            ));
        }
        self.infer_shapes(input).map(|_| ())
    }
}

fn layer_output_shape(kind: &LayerKind, inputs: &[Shape]) -> Result<Shape> {
    match kind {
        LayerKind::Conv { .. } => kind.conv_geometry().unwrap().output_shape(inputs[0]),
        LayerKind::MaxPool { .. } | LayerKind::AvgPool { .. } => kind.pool().unwrap().output_shape(inputs[0]),
        LayerKind::Relu => Ok(inputs[0]),
        LayerKind::BatchNorm { channels, .. } => {
            if inputs[0].channels != *channels {
                return Err(Error::config(
                    "batchnorm",
                    format!("expects {channels} channels, got {}", inputs[0].channels),
                ));
            }
            Ok(inputs[0])
        }
        LayerKind::Add => {
            if inputs[0] != inputs[1] {
                return Err(Error::config(
                    "add",
                    format!("shape mismatch: {} vs {}", inputs[0], inputs[1]),
                ));
            }
            Ok(inputs[0])
        }
        LayerKind::Concat => {
            let (h, w) = (inputs[0].height, inputs[0].width);
            let mut channels = 0;
            for s in inputs {
                if s.height != h || s.width != w {
                    return Err(Error::config(
                        "concat",
                        format!("spatial mismatch: {h}x{w} vs {}x{}", s.height, s.width),
                    ));
                }
                channels += s.channels;
            }
            Ok(Shape::new(channels, h, w))
        }
    }
}

impl Error {
    /// Re-labels a kernel configuration error with the layer it came from.
    pub(crate) fn in_layer(self, layer: &str) -> Error {
        match self {
            Error::Config { context, message } => Error::Config {
                context: layer.to_string(),
                message: format!("{context}: {message}"),
            },
            other => other,
        }
    }
}
