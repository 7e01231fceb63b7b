//! The three ablation families: loss weights, layer choice, learning rate.

use crate::config::{ExperimentConfig, Tag};
use crate::error::{BenchError, Result};

/// Tags of ablation set 1 (loss weights), 2 (layers), or 3 (learning rate),
/// baseline first.
pub fn ablation_tags(set: u8) -> Result<[Tag; 4]> {
    match set {
        1 => Ok([Tag::Baseline, Tag::VariantA, Tag::VariantB, Tag::VariantC]),
        2 => Ok([Tag::Baseline, Tag::Shallow, Tag::Deep, Tag::MultiLayer]),
        3 => Ok([Tag::Baseline, Tag::Conservative, Tag::Aggressive, Tag::VeryAggressive]),
        other => Err(BenchError::Config(format!("ablation set {other} does not exist (1, 2, or 3)"))),
    }
}

/// One config per tag of `set`, each derived from `base`.
pub fn make_ablation_set(base: &ExperimentConfig, set: u8) -> Result<Vec<ExperimentConfig>> {
    Ok(ablation_tags(set)?.iter().map(|&t| base.with_tag(t)).collect())
}

/// All three sets.
pub fn make_ablation_sets(base: &ExperimentConfig) -> Vec<Vec<ExperimentConfig>> {
    (1..=3).map(|s| make_ablation_set(base, s).expect("sets 1..=3 exist")).collect()
}
