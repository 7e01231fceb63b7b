//! Gatys-style optimization: Gram-matrix style losses, feature-space content
//! loss, and an Adam loop over the pixels of the generated image.

mod adam;
mod loss;
mod optimize;

pub use adam::{Adam, AdamConfig};
pub use loss::{
    content_loss, gram, style_loss, style_term, style_term_grad, total_loss, GramMatrix,
    LossWeights,
};
pub use optimize::{
    optimize, Checkpoint, Clock, Evaluation, LossObjective, NoClock, OptimConfig, Optimized, OptimizationTrace, TraceRow,
    LOG_INTERVAL,
};
