//! Layer parameters, He-style random initialization, and the `NSTW1` binary
//! weight format.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "NSTW1"                       5-byte magic
//! entry_count
//! repeated entry_count times:
//!     id_len, id (UTF-8)        "<layer id>.<param>"
//!     rank, dims[rank]
//!     payload                   prod(dims) little-endian f32 values
//! ```
//!
//! Conv layers carry `weight` (Cout×Cin×Kh×Kw) and, when the layer has a bias,
//! `bias` (Cout). Batch-norm layers carry `gamma`, `beta`, `running_mean`,
//! and `running_var` (C each).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::{ArchGraph, LayerKind};
use crate::error::{Error, Result};

pub const WEIGHT_FILE_MAGIC: &[u8; 5] = b"NSTW1";

#[derive(Debug, Clone, PartialEq)]
pub enum LayerWeights {
    Conv {
        weight: Vec<f32>,
        bias: Option<Vec<f32>>,
    },
    BatchNorm {
        gamma: Vec<f32>,
        beta: Vec<f32>,
        running_mean: Vec<f32>,
        running_var: Vec<f32>,
    },
}

/// Parameters keyed by layer id.
pub type WeightSet = BTreeMap<String, LayerWeights>;

/// One named tensor of a weight file.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightEntry {
    pub id: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Copy)]
pub enum WeightScheme<'a> {
    /// He-uniform conv weights, zero biases, identity batch norm.
    Random { seed: u64 },
    /// Contents of an `NSTW1` file.
    Encoded(&'a [u8]),
}

/// A graph together with parameters for every conv and batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    graph: ArchGraph,
    params: Vec<Option<LayerWeights>>,
}

impl WeightedGraph {
    /// Checks that every parameterized layer is covered exactly once with
    /// correctly sized tensors, and nothing else is present.
    pub fn new(graph: ArchGraph, mut weights: WeightSet) -> Result<Self> {
        let mut params = Vec::with_capacity(graph.layers().len());
        for layer in graph.layers() {
            let expected = expected_lengths(&layer.kind);
            let Some(expected) = expected else {
                params.push(None);
                continue;
            };
            let w = weights
                .remove(&layer.id)
                .ok_or_else(|| Error::load(&layer.id, "no parameters supplied"))?;
            check_lengths(&layer.id, &w, &expected)?;
            params.push(Some(w));
        }
        if let Some(extra) = weights.keys().next() {
            return Err(Error::load(extra, "parameters for a layer the graph does not have"));
        }
        Ok(WeightedGraph { graph, params })
    }

    pub fn graph(&self) -> &ArchGraph {
        &self.graph
    }

    pub fn params(&self, layer: usize) -> Option<&LayerWeights> {
        self.params[layer].as_ref()
    }

    pub fn weight_set(&self) -> WeightSet {
        self.graph
            .layers()
            .iter()
            .zip(&self.params)
            .filter_map(|(l, p)| p.clone().map(|p| (l.id.clone(), p)))
            .collect()
    }

    pub fn to_entries(&self) -> Vec<WeightEntry> {
        let mut entries = Vec::new();
        for (layer, p) in self.graph.layers().iter().zip(&self.params) {
            match (p, &layer.kind) {
                (Some(LayerWeights::Conv { weight, bias }), kind) => {
                    let g = kind.conv_geometry().expect("conv weights on a conv layer");
                    entries.push(WeightEntry {
                        id: format!("{}.weight", layer.id),
                        dims: vec![g.out_channels, g.in_channels, g.kernel.0, g.kernel.1],
                        data: weight.clone(),
                    });
                    if let Some(b) = bias {
                        entries.push(WeightEntry {
                            id: format!("{}.bias", layer.id),
                            dims: vec![b.len()],
                            data: b.clone(),
                        });
                    }
                }
                (
                    Some(LayerWeights::BatchNorm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                    }),
                    _,
                ) => {
                    for (name, v) in [
                        ("gamma", gamma),
                        ("beta", beta),
                        ("running_mean", running_mean),
                        ("running_var", running_var),
                    ] {
                        entries.push(WeightEntry {
                            id: format!("{}.{name}", layer.id),
                            dims: vec![v.len()],
                            data: v.clone(),
                        });
                    }
                }
                (None, _) => {}
            }
        }
        entries
    }
}

/// Expected tensor lengths for a layer: `(weight, bias)` for conv,
/// channel count for batch norm.
enum Expected {
    Conv { weight: usize, bias: Option<usize> },
    BatchNorm(usize),
}

fn expected_lengths(kind: &LayerKind) -> Option<Expected> {
    match *kind {
        LayerKind::Conv { bias, .. } => {
            let g = kind.conv_geometry().unwrap();
            Some(Expected::Conv {
                weight: g.weight_len(),
                bias: bias.then_some(g.out_channels),
            })
        }
        LayerKind::BatchNorm { channels, .. } => Some(Expected::BatchNorm(channels)),
        _ => None,
    }
}

fn check_lengths(layer: &str, w: &LayerWeights, expected: &Expected) -> Result<()> {
    let check = |what: &str, got: usize, want: usize| {
        if got == want {
            Ok(())
        } else {
            Err(Error::load(layer, format!("{what} has {got} values, expected {want}")))
        }
    };
    match (w, expected) {
        (LayerWeights::Conv { weight, bias }, Expected::Conv { weight: wl, bias: bl }) => {
            check("weight", weight.len(), *wl)?;
            match (bias, bl) {
                (Some(b), Some(n)) => check("bias", b.len(), *n),
                (None, None) => Ok(()),
                (Some(_), None) => Err(Error::load(layer, "bias given for a bias-free conv")),
                (None, Some(_)) => Err(Error::load(layer, "missing bias")),
            }
        }
        (
            LayerWeights::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            },
            Expected::BatchNorm(c),
        ) => {
            check("gamma", gamma.len(), *c)?;
            check("beta", beta.len(), *c)?;
            check("running_mean", running_mean.len(), *c)?;
            check("running_var", running_var.len(), *c)
        }
        _ => Err(Error::load(layer, "parameter kind does not match layer kind")),
    }
}

pub fn init_weights(graph: ArchGraph, scheme: WeightScheme<'_>) -> Result<WeightedGraph> {
    let weights = match scheme {
        WeightScheme::Random { seed } => random_weights(&graph, seed),
        WeightScheme::Encoded(bytes) => weights_from_entries(&graph, decode_weight_file(bytes)?)?,
    };
    WeightedGraph::new(graph, weights)
}

fn random_weights(graph: &ArchGraph, seed: u64) -> WeightSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = WeightSet::new();
    for layer in graph.layers() {
        match layer.kind {
            LayerKind::Conv { bias, .. } => {
                let g = layer.kind.conv_geometry().unwrap();
                let fan_in = (g.in_channels * g.kernel.0 * g.kernel.1) as f64;
                let bound = libm::sqrt(6.0 / fan_in);
                let weight = (0..g.weight_len())
                    .map(|_| {
                        let u = f64::from(rng.next_u32() >> 8) / f64::from(1u32 << 24);
                        ((2.0 * u - 1.0) * bound) as f32
                    })
                    .collect();
                let bias = bias.then(|| vec![0.0; g.out_channels]);
                set.insert(layer.id.clone(), LayerWeights::Conv { weight, bias });
            }
            LayerKind::BatchNorm { channels, .. } => {
                set.insert(
                    layer.id.clone(),
                    LayerWeights::BatchNorm {
                        gamma: vec![1.0; channels],
                        beta: vec![0.0; channels],
                        running_mean: vec![0.0; channels],
                        running_var: vec![1.0; channels],
                    },
                );
            }
            _ => {}
        }
    }
    set
}

/// Assembles file entries into per-layer parameters, naming the first layer
/// that is missing, duplicated, mis-shaped, or unknown.
pub fn weights_from_entries(graph: &ArchGraph, entries: Vec<WeightEntry>) -> Result<WeightSet> {
    let mut by_id: BTreeMap<String, WeightEntry> = BTreeMap::new();
    for e in entries {
        if by_id.contains_key(&e.id) {
            let layer = e.id.rsplit_once('.').map_or(e.id.as_str(), |(l, _)| l).to_string();
            return Err(Error::load(layer, format!("entry `{}` appears more than once", e.id)));
        }
        by_id.insert(e.id.clone(), e);
    }
    let mut take = |layer: &str, param: &str, dims: &[usize]| -> Result<Vec<f32>> {
        let key = format!("{layer}.{param}");
        let e = by_id
            .remove(&key)
            .ok_or_else(|| Error::load(layer, format!("missing entry `{key}`")))?;
        if e.dims != dims {
            return Err(Error::load(
                layer,
                format!("entry `{key}` has dims {:?}, expected {:?}", e.dims, dims),
            ));
        }
        Ok(e.data)
    };

    let mut set = WeightSet::new();
    for layer in graph.layers() {
        match layer.kind {
            LayerKind::Conv { bias, .. } => {
                let g = layer.kind.conv_geometry().unwrap();
                let weight = take(
                    &layer.id,
                    "weight",
                    &[g.out_channels, g.in_channels, g.kernel.0, g.kernel.1],
                )?;
                let bias = if bias {
                    Some(take(&layer.id, "bias", &[g.out_channels])?)
                } else {
                    None
                };
                set.insert(layer.id.clone(), LayerWeights::Conv { weight, bias });
            }
            LayerKind::BatchNorm { channels, .. } => {
                let c = [channels];
                let lw = LayerWeights::BatchNorm {
                    gamma: take(&layer.id, "gamma", &c)?,
                    beta: take(&layer.id, "beta", &c)?,
                    running_mean: take(&layer.id, "running_mean", &c)?,
                    running_var: take(&layer.id, "running_var", &c)?,
                };
                set.insert(layer.id.clone(), lw);
            }
            _ => {}
        }
    }
    if let Some(extra) = by_id.keys().next() {
        let layer = extra.rsplit_once('.').map_or(extra.as_str(), |(l, _)| l);
        return Err(Error::load(layer, format!("unexpected entry `{extra}`")));
    }
    Ok(set)
}

pub fn encode_weight_file(entries: &[WeightEntry]) -> Result<Vec<u8>> {
    let payload: usize = entries.iter().map(|e| e.data.len() * 4 + e.id.len() + 8 + 4 * e.dims.len()).sum();
    let mut out = Vec::with_capacity(WEIGHT_FILE_MAGIC.len() + 4 + payload);
    out.extend_from_slice(WEIGHT_FILE_MAGIC);
    push_u32(&mut out, entries.len(), "entry count")?;
    for e in entries {
        let numel: usize = e.dims.iter().product();
        if numel != e.data.len() {
            return Err(Error::load(
                &e.id,
                format!("dims {:?} describe {numel} values, payload has {}", e.dims, e.data.len()),
            ));
        }
        push_u32(&mut out, e.id.len(), &e.id)?;
        out.extend_from_slice(e.id.as_bytes());
        push_u32(&mut out, e.dims.len(), &e.id)?;
        for &d in &e.dims {
            push_u32(&mut out, d, &e.id)?;
        }
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn push_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::load(what, "value does not fit in u32"))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::load(what, format!("file truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode_weight_file(bytes: &[u8]) -> Result<Vec<WeightEntry>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(WEIGHT_FILE_MAGIC.len(), "<header>")? != WEIGHT_FILE_MAGIC {
        return Err(Error::load("<header>", "bad magic, expected NSTW1"));
    }
    let count = r.u32("<header>")?;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let ctx = format!("<entry {i}>");
        let len = r.u32(&ctx)?;
        let id = core::str::from_utf8(r.take(len, &ctx)?)
            .map_err(|_| Error::load(&ctx, "id is not valid UTF-8"))?
            .to_string();
        let rank = r.u32(&id)?;
        let dims = (0..rank).map(|_| r.u32(&id)).collect::<Result<Vec<_>>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::load(&id, "dims overflow"))?;
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::load(&id, "dims overflow"))?, &id)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push(WeightEntry { id, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::load("<trailer>", format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(entries)
}
