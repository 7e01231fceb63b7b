use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::loss::{content_loss, gram, style_term, style_term_grad, total_loss, GramMatrix, LossWeights};
use crate::arch::{denormalize, normalize_input, WeightedGraph};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{FeatureMap, ImageTensor};

/// Losses are logged every this many epochs, plus at every checkpoint.
pub const LOG_INTERVAL: usize = 10;

/// Wall-clock source and run budget; the core has no clock of its own.
pub trait Clock {
    /// Seconds since an arbitrary fixed origin.
    fn seconds(&self) -> f64;

    /// Polled once per epoch; returning true stops the run with
    /// [`Error::Interrupted`].
    fn budget_exhausted(&self) -> bool {
        false
    }
}

/// A clock that never advances, for callers that do not need timings.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub checkpoint_epochs: Vec<usize>,
    pub content_tap: usize,
    pub style_taps: Vec<usize>,
    /// Seeds the weight initialization and any noise baselines; the loop
    /// itself is deterministic.
    pub seed: u64,
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive and finite"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs", "must be at least 1"));
        }
        if self.checkpoint_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("checkpoint_epochs", "must be strictly increasing"));
        }
        if let Some(&bad) = self
            .checkpoint_epochs
            .iter()
            .find(|&&e| e == 0 || e > self.max_epochs)
        {
            return Err(Error::config(
                "checkpoint_epochs",
                format!("epoch {bad} outside 1..={}", self.max_epochs),
            ));
        }
        if self.style_taps.is_empty() {
            return Err(Error::config("style_taps", "at least one style tap is required"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub total_loss: f64,
    pub content_loss: f64,
    pub style_loss: f64,
    pub wall_seconds: f64,
}

/// Generated image after `epoch` updates, in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub image: ImageTensor<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizationTrace {
    pub rows: Vec<TraceRow>,
    pub checkpoints: Vec<Checkpoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    /// Final generated image in `[0, 1]`.
    pub image: ImageTensor<f32>,
    pub trace: OptimizationTrace,
}

/// Loss value, its parts, and the gradient with respect to the normalized
/// image at one point.
#[derive(Debug, Clone)]
pub struct Evaluation<T: Scalar> {
    pub total: f64,
    pub content: f64,
    pub style: f64,
    pub grad: ImageTensor<T>,
}

/// The total loss as a function of the normalized generated image, with
/// content and style targets precomputed.
#[derive(Debug, Clone)]
pub struct LossObjective<'g, T: Scalar> {
    graph: &'g WeightedGraph,
    weights: LossWeights,
    content_tap: usize,
    style_taps: Vec<(usize, f64)>,
    taps: Vec<usize>,
    content_target: FeatureMap<T>,
    style_targets: BTreeMap<usize, GramMatrix>,
}

impl<'g, T: Scalar> LossObjective<'g, T> {
    /// `content` and `style` are already normalized and of equal shape.
    pub fn new(
        graph: &'g WeightedGraph,
        content: &ImageTensor<T>,
        style: &ImageTensor<T>,
        weights: &LossWeights,
        content_tap: usize,
        style_taps: &[usize],
    ) -> Result<Self> {
        weights.validate()?;
        if content.shape() != style.shape() {
            return Err(Error::config(
                "images",
                format!(
                    "content {} and style {} must be resized to the same shape",
                    content.shape(),
                    style.shape()
                ),
            ));
        }
        let style_taps: Vec<(usize, f64)> = style_taps
            .iter()
            .map(|&t| {
                weights
                    .layer_weights
                    .get(&t)
                    .map(|&w| (t, w))
                    .ok_or_else(|| Error::config(format!("tap {t}"), "style tap has no layer weight"))
            })
            .collect::<Result<_>>()?;
        let taps: Vec<usize> = core::iter::once(content_tap)
            .chain(style_taps.iter().map(|&(t, _)| t))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let content_target = graph
            .forward_with_taps(content, &[content_tap])?
            .features
            .remove(&content_tap)
            .expect("requested tap present");
        let style_fwd = graph.forward_with_taps(style, &taps)?;
        let style_targets = style_taps
            .iter()
            .map(|&(t, _)| (t, gram(&style_fwd.features[&t])))
            .collect();
        Ok(LossObjective {
            graph,
            weights: weights.clone(),
            content_tap,
            style_taps,
            taps,
            content_target,
            style_targets,
        })
    }

    pub fn evaluate(&self, image: &ImageTensor<T>) -> Result<Evaluation<T>> {
        let fwd = self.graph.forward_with_taps(image, &self.taps)?;
        let (alpha, beta) = (self.weights.alpha, self.weights.beta);
        let mut grads: BTreeMap<usize, ImageTensor<T>> = BTreeMap::new();
        let mut add_grad = |tap: usize, g: ImageTensor<T>| -> Result<()> {
            match grads.get_mut(&tap) {
                Some(acc) => acc.accumulate(&g),
                None => {
                    grads.insert(tap, g);
                    Ok(())
                }
            }
        };

        let (content, content_grad) = content_loss(&fwd.features[&self.content_tap], &self.content_target)?;
        if alpha > 0.0 {
            add_grad(self.content_tap, content_grad.scaled(T::from_f64(alpha)))?;
        }
        let mut style = 0.0;
        for &(tap, w) in &self.style_taps {
            let feature = &fwd.features[&tap];
            let g = gram(feature);
            let target = &self.style_targets[&tap];
            style += w * style_term(&g, target, feature.positions())?;
            if beta > 0.0 && w > 0.0 {
                add_grad(tap, style_term_grad(feature, &g, target)?.scaled(T::from_f64(beta * w)))?;
            }
        }
        let grad = fwd.tape.backward(self.graph, &grads)?;
        Ok(Evaluation {
            total: total_loss(content, style, &self.weights),
            content,
            style,
            grad,
        })
    }

    /// Kink signature (see `Tape::kink_signature`) of the forward pass at
    /// `image`; finite-difference oracles skip coordinates where it changes.
    pub fn kink_signature(&self, image: &ImageTensor<T>) -> Result<u64> {
        let fwd = self.graph.forward_with_taps(image, &self.taps)?;
        Ok(fwd.tape.kink_signature(self.graph))
    }
}

/// Optimizes a generated image, initialized from `content`, so that its
/// features match `content` at the content tap and its Gram matrices match
/// `style` at the style taps. Both images are RGB in `[0, 1]` and of equal
/// shape; optimization happens in normalized space without box constraints.
///
/// The logged loss at epoch `e` is measured before the `e`-th update; the
/// checkpoint image at epoch `e` is taken after it.
pub fn optimize(
    content: &ImageTensor<f32>,
    style: &ImageTensor<f32>,
    graph: &WeightedGraph,
    weights: &LossWeights,
    cfg: &OptimConfig,
    clock: &dyn Clock,
) -> Result<Optimized> {
    cfg.validate()?;
    let start = clock.seconds();
    let mut x = normalize_input(content)?;
    let objective = LossObjective::new(
        graph,
        &x,
        &normalize_input(style)?,
        weights,
        cfg.content_tap,
        &cfg.style_taps,
    )?;
    let mut adam = Adam::new(AdamConfig::with_learning_rate(cfg.learning_rate), x.len());
    let mut trace = OptimizationTrace::default();
    let mut next_checkpoint = cfg.checkpoint_epochs.iter().peekable();
    let mut last_wall = 0.0f64;

    for epoch in 1..=cfg.max_epochs {
        if clock.budget_exhausted() {
            return Err(Error::Interrupted { epoch });
        }
        let eval = objective.evaluate(&x)?;
        if !eval.total.is_finite() || !eval.grad.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: eval.total,
            });
        }
        let is_checkpoint = next_checkpoint.peek() == Some(&&epoch);
        if epoch % LOG_INTERVAL == 0 || is_checkpoint {
            // Guard against clocks that step backwards.
            last_wall = last_wall.max(clock.seconds() - start);
            trace.rows.push(TraceRow {
                epoch,
                total_loss: eval.total,
                content_loss: eval.content,
                style_loss: eval.style,
                wall_seconds: last_wall,
            });
        }
        adam.step(x.data_mut(), eval.grad.data());
        if is_checkpoint {
            next_checkpoint.next();
            trace.checkpoints.push(Checkpoint {
                epoch,
                image: denormalize(&x)?,
            });
        }
    }
    if !x.is_finite() {
        return Err(Error::Divergence {
            epoch: cfg.max_epochs,
            loss: f64::NAN,
        });
    }
    Ok(Optimized {
        image: denormalize(&x)?,
        trace,
    })
}
