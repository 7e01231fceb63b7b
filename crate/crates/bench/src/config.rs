//! Experiment configuration files: a strict JSON schema, preset and ablation
//! tag defaults, validation, and content-addressed fingerprints.
//!
//! ```json
//! {
//!   "preset": "desk",
//!   "defaults": { "arch": "tiny_vgg" },
//!   "experiments": [
//!     { "content": "images/a.png", "style": { "pattern": "parang", "seed": 3 } },
//!     { "content": { "pattern": "kawung", "seed": 1 }, "style": "images/b.png", "tag": "variant_a" }
//!   ]
//! }
//! ```
//!
//! Every experiment field may be set per experiment or under `defaults`.
//! Resolution order, later winning: preset, `defaults`, tag, experiment.
//! Layer ordinals use the 1..=10 scale of the full-size tap registries and
//! are projected onto smaller registries at run time.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nst_core::arch::ArchName;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BenchError, Result};
use crate::patterns::Pattern;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 64×64 images, tiny_vgg, 500 epochs, checkpoints at 100/250/500.
    #[default]
    Desk,
    /// 512×512 images, vgg19, 5000 epochs, checkpoints at 100/2500/5000.
    Full,
}

/// Ablation variants; each one overrides a single field group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    #[default]
    Baseline,
    /// β = 1e7 (reduced style).
    VariantA,
    /// β = 1e9 (increased style).
    VariantB,
    /// α = 10 (increased content).
    VariantC,
    /// Content L1, style L6.
    Shallow,
    /// Content L3, style L10.
    Deep,
    /// Content L2, style L6 + L8 + L10.
    MultiLayer,
    /// LR = 0.01.
    Conservative,
    /// LR = 0.1.
    Aggressive,
    /// LR = 0.2.
    VeryAggressive,
}

impl Tag {
    pub const ALL: [Tag; 10] = [
        Tag::Baseline,
        Tag::VariantA,
        Tag::VariantB,
        Tag::VariantC,
        Tag::Shallow,
        Tag::Deep,
        Tag::MultiLayer,
        Tag::Conservative,
        Tag::Aggressive,
        Tag::VeryAggressive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Baseline => "baseline",
            Tag::VariantA => "variant_a",
            Tag::VariantB => "variant_b",
            Tag::VariantC => "variant_c",
            Tag::Shallow => "shallow",
            Tag::Deep => "deep",
            Tag::MultiLayer => "multi_layer",
            Tag::Conservative => "conservative",
            Tag::Aggressive => "aggressive",
            Tag::VeryAggressive => "very_aggressive",
        }
    }

    /// The field overrides this tag implies.
    fn overrides(self) -> ExperimentSpec {
        let mut s = ExperimentSpec::default();
        match self {
            Tag::Baseline => {}
            Tag::VariantA => s.beta = Some(1e7),
            Tag::VariantB => s.beta = Some(1e9),
            Tag::VariantC => s.alpha = Some(10.0),
            Tag::Shallow => {
                s.content_layer = Some(1);
                s.style_layers = Some(vec![6]);
            }
            Tag::Deep => {
                s.content_layer = Some(3);
                s.style_layers = Some(vec![10]);
            }
            Tag::MultiLayer => {
                s.content_layer = Some(2);
                s.style_layers = Some(vec![6, 8, 10]);
            }
            Tag::Conservative => s.learning_rate = Some(0.01),
            Tag::Aggressive => s.learning_rate = Some(0.1),
            Tag::VeryAggressive => s.learning_rate = Some(0.2),
        }
        s
    }
}

/// A file on disk or a procedurally rendered pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageSource {
    File(PathBuf),
    Pattern { pattern: Pattern, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightSource {
    /// He-uniform initialization from this seed.
    Random(u64),
    /// An `NSTW1` weight file.
    File(PathBuf),
}

/// Backbone and taps for the deep-feature distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerceptualSpec {
    pub arch: ArchName,
    /// Tap ordinals of `arch` (not projected). Empty means all taps.
    #[serde(default)]
    pub taps: Vec<usize>,
    /// One weight per tap; empty means uniform.
    #[serde(default)]
    pub tap_weights: Vec<f64>,
    pub weights: WeightSource,
}

/// One experiment as written in a file: every field optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: Option<String>,
    pub arch: Option<ArchName>,
    pub content: Option<ImageSource>,
    pub style: Option<ImageSource>,
    pub tag: Option<Tag>,
    pub image_size: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub content_layer: Option<usize>,
    pub style_layers: Option<Vec<usize>>,
    pub style_layer_weights: Option<Vec<f64>>,
    pub learning_rate: Option<f64>,
    pub max_epochs: Option<usize>,
    pub checkpoint_epochs: Option<Vec<usize>>,
    pub seed: Option<u64>,
    pub weights: Option<WeightSource>,
    pub perceptual: Option<PerceptualSpec>,
}

impl ExperimentSpec {
    /// Fields set in `other` replace those in `self`.
    fn overlay(mut self, other: &ExperimentSpec) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f.clone(); } )* };
        }
        take!(
            name, arch, content, style, tag, image_size, alpha, beta, content_layer, style_layers,
            style_layer_weights, learning_rate, max_epochs, checkpoint_epochs, seed, weights, perceptual
        );
        self
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub preset: Option<Preset>,
    #[serde(default)]
    pub defaults: ExperimentSpec,
    pub experiments: Vec<ExperimentSpec>,
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub arch: ArchName,
    pub content: ImageSource,
    pub style: ImageSource,
    pub tag: Tag,
    pub image_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub content_layer: usize,
    pub style_layers: Vec<usize>,
    pub style_layer_weights: Vec<f64>,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub checkpoint_epochs: Vec<usize>,
    pub seed: u64,
    pub weights: WeightSource,
    pub perceptual: PerceptualSpec,
}

/// Baseline values (α = 1, β = 1e8, layers 2/8, LR 0.05) plus the preset's
/// scale.
pub fn preset_defaults(preset: Preset) -> ExperimentSpec {
    let (arch, size, epochs, checkpoints, perceptual) = match preset {
        Preset::Desk => (ArchName::TinyVgg, 64, 500, vec![100, 250, 500], ArchName::TinyVgg),
        Preset::Full => (ArchName::Vgg19, 512, 5000, vec![100, 2500, 5000], ArchName::Vgg16),
    };
    ExperimentSpec {
        arch: Some(arch),
        tag: Some(Tag::Baseline),
        image_size: Some(size),
        alpha: Some(1.0),
        beta: Some(1e8),
        content_layer: Some(2),
        style_layers: Some(vec![8]),
        learning_rate: Some(0.05),
        max_epochs: Some(epochs),
        checkpoint_epochs: Some(checkpoints),
        seed: Some(0),
        perceptual: Some(PerceptualSpec {
            arch: perceptual,
            taps: Vec::new(),
            tap_weights: Vec::new(),
            weights: WeightSource::Random(0),
        }),
        ..ExperimentSpec::default()
    }
}

impl ExperimentConfig {
    /// Resolves a spec against preset defaults and file-level defaults.
    pub fn resolve(
        preset: Preset,
        defaults: &ExperimentSpec,
        spec: &ExperimentSpec,
        index: usize,
    ) -> Result<Self> {
        let base = preset_defaults(preset).overlay(defaults);
        let tag = spec.tag.or(base.tag).unwrap_or_default();
        let s = base.overlay(&tag.overrides()).overlay(spec);
        let ctx = |field: &str| BenchError::Config(format!("experiments[{index}]: missing `{field}`"));
        let arch = s.arch.ok_or_else(|| ctx("arch"))?;
        let style_layers = s.style_layers.ok_or_else(|| ctx("style_layers"))?;
        let style_layer_weights = match s.style_layer_weights {
            // Tag overrides change the layer list; a weight list that no
            // longer fits it reverts to uniform weights.
            Some(w) if spec.style_layer_weights.is_some() || w.len() == style_layers.len() => w,
            _ => vec![1.0 / style_layers.len().max(1) as f64; style_layers.len()],
        };
        let seed = s.seed.unwrap_or(0);
        let cfg = ExperimentConfig {
            name: s
                .name
                .unwrap_or_else(|| format!("exp{index:03}-{}-{}", arch, tag.as_str())),
            arch,
            content: s.content.ok_or_else(|| ctx("content"))?,
            style: s.style.ok_or_else(|| ctx("style"))?,
            tag,
            image_size: s.image_size.ok_or_else(|| ctx("image_size"))?,
            alpha: s.alpha.ok_or_else(|| ctx("alpha"))?,
            beta: s.beta.ok_or_else(|| ctx("beta"))?,
            content_layer: s.content_layer.ok_or_else(|| ctx("content_layer"))?,
            style_layers,
            style_layer_weights,
            learning_rate: s.learning_rate.ok_or_else(|| ctx("learning_rate"))?,
            max_epochs: s.max_epochs.ok_or_else(|| ctx("max_epochs"))?,
            checkpoint_epochs: s.checkpoint_epochs.ok_or_else(|| ctx("checkpoint_epochs"))?,
            seed,
            weights: s.weights.unwrap_or(WeightSource::Random(seed)),
            perceptual: s.perceptual.ok_or_else(|| ctx("perceptual"))?,
        };
        cfg.validate()
            .map_err(|m| BenchError::Config(format!("experiments[{index}] ({}): {m}", cfg.name)))?;
        Ok(cfg)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let graph = nst_core::arch::build_arch(self.arch).map_err(|e| e.to_string())?;
        if self.image_size < graph.min_input() {
            return Err(format!(
                "image_size {} below the {} minimum of {}",
                self.image_size,
                self.arch,
                graph.min_input()
            ));
        }
        let layers = std::iter::once(self.content_layer).chain(self.style_layers.iter().copied());
        for l in layers {
            if !(1..=nst_core::arch::FULL_TAP_COUNT).contains(&l) {
                return Err(format!("layer {l} outside 1..=10"));
            }
        }
        if self.style_layers.is_empty() {
            return Err("style_layers is empty".into());
        }
        if self.style_layer_weights.len() != self.style_layers.len() {
            return Err(format!(
                "{} style_layer_weights for {} style_layers",
                self.style_layer_weights.len(),
                self.style_layers.len()
            ));
        }
        let loss = self.loss_weights_for(&self.style_layers);
        loss.validate().map_err(|e| e.to_string())?;
        self.optim_config(self.content_layer, self.style_layers.clone())
            .validate()
            .map_err(|e| e.to_string())?;
        for (what, src) in [("content", &self.content), ("style", &self.style)] {
            if let ImageSource::File(p) = src {
                if !p.is_file() {
                    return Err(format!("{what} image {} does not exist", p.display()));
                }
            }
        }
        if let WeightSource::File(p) = &self.weights {
            if !p.is_file() {
                return Err(format!("weight file {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    /// This config with `tag`'s field group applied; `Baseline` keeps the
    /// current values. The name gains the tag as a suffix.
    pub fn with_tag(&self, tag: Tag) -> Self {
        let o = tag.overrides();
        let mut c = self.clone();
        c.tag = tag;
        c.name = format!("{}-{}", self.name, tag.as_str());
        if let Some(v) = o.alpha {
            c.alpha = v;
        }
        if let Some(v) = o.beta {
            c.beta = v;
        }
        if let Some(v) = o.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = o.content_layer {
            c.content_layer = v;
        }
        if let Some(v) = o.style_layers {
            c.style_layer_weights = vec![1.0 / v.len() as f64; v.len()];
            c.style_layers = v;
        }
        c
    }

    /// Loss weights keyed by the given (already projected) style taps.
    pub fn loss_weights_for(&self, style_taps: &[usize]) -> nst_core::nst::LossWeights {
        let mut layer_weights = BTreeMap::new();
        for (&t, &w) in style_taps.iter().zip(&self.style_layer_weights) {
            // Projection can merge ordinals onto one tap; their weights add.
            *layer_weights.entry(t).or_insert(0.0) += w;
        }
        nst_core::nst::LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            layer_weights,
        }
    }

    pub fn optim_config(&self, content_tap: usize, mut style_taps: Vec<usize>) -> nst_core::nst::OptimConfig {
        style_taps.sort_unstable();
        style_taps.dedup();
        nst_core::nst::OptimConfig {
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            checkpoint_epochs: self.checkpoint_epochs.clone(),
            content_tap,
            style_taps,
            seed: self.seed,
        }
    }

    /// SHA-256 of the canonical JSON form (object keys sorted, `name`
    /// excluded), so the hash depends only on what the experiment computes.
    pub fn fingerprint(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("name");
        }
        let canonical = canonical_json(&value);
        format!("{:x}", Sha256::digest(canonical.as_bytes()))
    }
}

/// Compact JSON with object keys in sorted order at every level.
pub fn canonical_json(value: &serde_json::Value) -> String {
    use serde_json::Value;
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let body: Vec<String> = keys
                .into_iter()
                .map(|k| format!("{}:{}", Value::String(k.clone()), canonical_json(&map[k])))
                .collect();
            format!("{{{}}}", body.join(","))
        }
        Value::Array(items) => {
            let body: Vec<String> = items.iter().map(canonical_json).collect();
            format!("[{}]", body.join(","))
        }
        other => other.to_string(),
    }
}

/// Parses a config document. Relative image and weight paths are resolved
/// against `base_dir`. `preset_override` beats the file's `preset`.
pub fn parse_config(text: &str, base_dir: &Path, preset_override: Option<Preset>) -> Result<Vec<ExperimentConfig>> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut file: ConfigFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        BenchError::Config(format!("at `{path}`: {}", e.inner()))
    })?;
    if file.experiments.is_empty() {
        return Err(BenchError::Config("no experiments".into()));
    }
    let rebase = |spec: &mut ExperimentSpec| {
        for src in [&mut spec.content, &mut spec.style].into_iter().flatten() {
            if let ImageSource::File(p) = src {
                if p.is_relative() {
                    *p = base_dir.join(&*p);
                }
            }
        }
        if let Some(WeightSource::File(p)) = &mut spec.weights {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        if let Some(PerceptualSpec { weights: WeightSource::File(p), .. }) = &mut spec.perceptual {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
    };
    rebase(&mut file.defaults);
    file.experiments.iter_mut().for_each(rebase);
    let preset = preset_override.or(file.preset).unwrap_or_default();
    file.experiments
        .iter()
        .enumerate()
        .map(|(i, spec)| ExperimentConfig::resolve(preset, &file.defaults, spec, i))
        .collect()
}

pub fn load_config(path: &Path, preset_override: Option<Preset>) -> Result<Vec<ExperimentConfig>> {
    let text = fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base, preset_override)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"experiments": [{"content": {"pattern": "kawung", "seed": 1},
                                               "style": {"pattern": "parang", "seed": 2}}]}"#;

    fn parse(text: &str) -> Result<Vec<ExperimentConfig>> {
        parse_config(text, Path::new("."), None)
    }

    #[test]
    fn omitted_fields_take_baseline_values() {
        let cfg = &parse(MINIMAL).unwrap()[0];
        assert_eq!(cfg.learning_rate, 0.05);
        assert_eq!((cfg.alpha, cfg.beta), (1.0, 1e8));
        assert_eq!((cfg.content_layer, cfg.style_layers.as_slice()), (2, &[8][..]));
        assert_eq!((cfg.arch, cfg.image_size, cfg.max_epochs), (ArchName::TinyVgg, 64, 500));
        assert_eq!(cfg.checkpoint_epochs, vec![100, 250, 500]);
    }

    #[test]
    fn full_preset_scales_up() {
        let cfg = &parse_config(MINIMAL, Path::new("."), Some(Preset::Full)).unwrap()[0];
        assert_eq!((cfg.arch, cfg.image_size, cfg.max_epochs), (ArchName::Vgg19, 512, 5000));
        assert_eq!(cfg.checkpoint_epochs, vec![100, 2500, 5000]);
    }

    #[test]
    fn tags_set_their_field_group() {
        let with_tag = |tag: &str| {
            let text = MINIMAL.replace(r#""style":"#, &format!(r#""tag": "{tag}", "style":"#));
            parse(&text).unwrap().remove(0)
        };
        assert_eq!(with_tag("variant_a").beta, 1e7);
        assert_eq!(with_tag("variant_b").beta, 1e9);
        assert_eq!(with_tag("variant_c").alpha, 10.0);
        let multi = with_tag("multi_layer");
        assert_eq!(multi.style_layers, vec![6, 8, 10]);
        assert_eq!(multi.style_layer_weights.len(), 3);
        assert_eq!(with_tag("very_aggressive").learning_rate, 0.2);
    }

    #[test]
    fn explicit_fields_beat_tags() {
        let text = MINIMAL.replace(r#""style":"#, r#""tag": "variant_a", "beta": 5e7, "style":"#);
        assert_eq!(parse(&text).unwrap()[0].beta, 5e7);
    }

    #[test]
    fn strict_schema_reports_path() {
        let err = parse(r#"{"experiments": [{"content": "a.png", "lr": 0.1}]}"#).unwrap_err();
        let msg = err.to_string();
        assert!(err.is_config());
        assert!(msg.contains("experiments[0]") && msg.contains("lr"), "{msg}");
        assert!(parse(r#"{"experiments": [], "extra": 1}"#).unwrap_err().to_string().contains("extra"));
    }

    #[test]
    fn empty_experiment_list_rejected() {
        let err = parse(r#"{"experiments": []}"#).unwrap_err();
        assert!(err.to_string().contains("no experiments"));
    }

    #[test]
    fn missing_files_and_bad_values_rejected() {
        let missing = MINIMAL.replace(r#"{"pattern": "kawung", "seed": 1}"#, r#""nope/missing.png""#);
        assert!(parse(&missing).unwrap_err().to_string().contains("does not exist"));
        for bad in [r#""learning_rate": 0"#, r#""content_layer": 11"#, r#""image_size": 4"#, r#""checkpoint_epochs": [600]"#] {
            let text = MINIMAL.replace(r#""style":"#, &format!("{bad}, \"style\":"));
            assert!(parse(&text).is_err(), "{bad}");
        }
    }

    #[test]
    fn fingerprint_ignores_key_order_and_name() {
        let a = parse(MINIMAL).unwrap().remove(0);
        let reordered = r#"{"experiments": [{"style": {"seed": 2, "pattern": "parang"},
                                              "name": "other", "content": {"seed": 1, "pattern": "kawung"}}]}"#;
        let b = parse(reordered).unwrap().remove(0);
        assert_eq!(a.fingerprint(), b.fingerprint());
        let mut c = a.clone();
        c.seed += 1;
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }
}
